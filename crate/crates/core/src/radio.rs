//! Downlink radio model: path loss, RSRP, SINR, per-PRB rate, PRB demand
//! and base-station load.
//!
//! Channel gain is deterministic (path loss plus antenna gains, no fading).
//! Every dB/linear conversion goes through [`db_to_linear`] and
//! [`linear_to_db`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadioError {
    #[error("user {user} cannot be served by base station {bs} (zero per-PRB rate)")]
    UnreachableUser { user: usize, bs: usize },
}

/// Planar position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance_m(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseStation {
    pub id: usize,
    pub position: Position,
    pub tx_power_dbm: f64,
    pub antenna_gain_dbi: f64,
    pub total_prbs: u32,
    pub coverage_radius_m: f64,
    /// Cell individual offsets toward each neighbor, in dB. Absent entries are 0.
    #[serde(default)]
    pub cio_db: BTreeMap<usize, f64>,
}

impl BaseStation {
    pub fn cio_toward(&self, neighbor: usize) -> f64 {
        self.cio_db.get(&neighbor).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: usize,
    pub position: Position,
    pub demand_bps: f64,
    pub rx_gain_dbi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioConstants {
    pub prb_bandwidth_hz: f64,
    pub noise_dbm: f64,
    pub hysteresis_db: f64,
    pub pathloss_intercept_db: f64,
    pub pathloss_slope_db: f64,
    pub min_distance_km: f64,
}

/// Thermal noise density in dBm/Hz.
pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;
pub const DEFAULT_NOISE_FIGURE_DB: f64 = 9.0;

impl Default for RadioConstants {
    fn default() -> Self {
        let prb_bandwidth_hz = 180e3;
        Self {
            prb_bandwidth_hz,
            noise_dbm: THERMAL_NOISE_DBM_PER_HZ
                + linear_to_db(prb_bandwidth_hz)
                + DEFAULT_NOISE_FIGURE_DB,
            hysteresis_db: 2.0,
            pathloss_intercept_db: 128.1,
            pathloss_slope_db: 37.6,
            min_distance_km: 0.035,
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Log-distance path loss with the distance clamped below at `min_distance_km`.
pub fn path_loss_db(distance_km: f64, constants: &RadioConstants) -> f64 {
    let d = distance_km.max(constants.min_distance_km);
    constants.pathloss_intercept_db + constants.pathloss_slope_db * d.log10()
}

pub fn rsrp_dbm(bs: &BaseStation, user: &User, constants: &RadioConstants) -> f64 {
    let d_km = bs.position.distance_m(&user.position) / 1000.0;
    bs.tx_power_dbm + bs.antenna_gain_dbi + user.rx_gain_dbi - path_loss_db(d_km, constants)
}

/// Linear SINR of `user` served by `serving`, every other station in `all_bs`
/// counted as a full-power interferer.
pub fn sinr(
    user: &User,
    serving: &BaseStation,
    all_bs: &[BaseStation],
    constants: &RadioConstants,
) -> f64 {
    let signal = db_to_linear(rsrp_dbm(serving, user, constants));
    let interference: f64 = all_bs
        .iter()
        .filter(|bs| bs.id != serving.id)
        .map(|bs| db_to_linear(rsrp_dbm(bs, user, constants)))
        .sum();
    signal / (db_to_linear(constants.noise_dbm) + interference)
}

/// Shannon rate of a single PRB in bit/s.
pub fn prb_rate(sinr: f64, constants: &RadioConstants) -> f64 {
    constants.prb_bandwidth_hz * (1.0 + sinr).log2()
}

/// Whole PRBs needed to carry `demand_bps` at `per_prb_rate` bit/s each.
///
/// Returns `None` when the rate is zero (or not a usable number), i.e. the
/// user cannot be served at all.
pub fn prb_demand(demand_bps: f64, per_prb_rate: f64) -> Option<u32> {
    if !(per_prb_rate > 0.0) || !per_prb_rate.is_finite() {
        return None;
    }
    let prbs = (demand_bps / per_prb_rate).ceil().max(1.0);
    if prbs > u32::MAX as f64 {
        return None;
    }
    Some(prbs as u32)
}

/// Fraction of `bs`'s PRB budget consumed by the given PRB demands.
pub fn bs_load<I>(bs: &BaseStation, attached_prbs: I) -> f64
where
    I: IntoIterator<Item = u32>,
{
    let used: u64 = attached_prbs.into_iter().map(u64::from).sum();
    used as f64 / f64::from(bs.total_prbs)
}

/// Load the user would add to `bs` if served there.
pub fn user_load_share(
    user: &User,
    bs: &BaseStation,
    all_bs: &[BaseStation],
    constants: &RadioConstants,
) -> Result<f64, RadioError> {
    let rate = prb_rate(sinr(user, bs, all_bs, constants), constants);
    let prbs = prb_demand(user.demand_bps, rate).ok_or(RadioError::UnreachableUser {
        user: user.id,
        bs: bs.id,
    })?;
    Ok(f64::from(prbs) / f64::from(bs.total_prbs))
}

/// Precomputed per-(user, BS) radio quantities. Geometry is static, so these
/// never change during a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioMap {
    /// `rsrp_dbm[u][i]`
    pub rsrp_dbm: Vec<Vec<f64>>,
    /// `sinr[u][i]`, linear
    pub sinr: Vec<Vec<f64>>,
    /// `prbs[u][i]`, `None` when the user is unreachable from BS `i`
    pub prbs: Vec<Vec<Option<u32>>>,
}

impl RadioMap {
    pub fn compute(bss: &[BaseStation], users: &[User], constants: &RadioConstants) -> Self {
        let mut rsrp = Vec::with_capacity(users.len());
        let mut sinrs = Vec::with_capacity(users.len());
        let mut prbs = Vec::with_capacity(users.len());
        for user in users {
            let row_rsrp: Vec<f64> = bss.iter().map(|bs| rsrp_dbm(bs, user, constants)).collect();
            let received: Vec<f64> = row_rsrp.iter().map(|&p| db_to_linear(p)).collect();
            let noise = db_to_linear(constants.noise_dbm);
            let row_sinr: Vec<f64> = (0..received.len())
                .map(|i| {
                    let interference: f64 = received
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(_, p)| p)
                        .sum();
                    received[i] / (noise + interference)
                })
                .collect();
            let row_prbs = row_sinr
                .iter()
                .map(|&s| prb_demand(user.demand_bps, prb_rate(s, constants)))
                .collect();
            rsrp.push(row_rsrp);
            sinrs.push(row_sinr);
            prbs.push(row_prbs);
        }
        Self {
            rsrp_dbm: rsrp,
            sinr: sinrs,
            prbs,
        }
    }

    pub fn user_count(&self) -> usize {
        self.prbs.len()
    }

    /// `B_{u,i} / B_i`, or `None` if unreachable.
    pub fn load_share(&self, user: usize, bs: usize, total_prbs: u32) -> Option<f64> {
        self.prbs[user][bs].map(|p| f64::from(p) / f64::from(total_prbs))
    }
}

/// Base stations, users and the radio constants they share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub stations: Vec<BaseStation>,
    pub users: Vec<User>,
    pub constants: RadioConstants,
}

impl Scenario {
    pub fn radio_map(&self) -> RadioMap {
        RadioMap::compute(&self.stations, &self.users, &self.constants)
    }

    pub fn positions(&self) -> Vec<Position> {
        self.stations.iter().map(|bs| bs.position).collect()
    }

    pub fn radii(&self) -> Vec<f64> {
        self.stations
            .iter()
            .map(|bs| bs.coverage_radius_m)
            .collect()
    }

    pub fn total_prbs(&self) -> Vec<u32> {
        self.stations.iter().map(|bs| bs.total_prbs).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn station(id: usize, x: f64, y: f64) -> BaseStation {
        BaseStation {
            id,
            position: Position::new(x, y),
            tx_power_dbm: 46.0,
            antenna_gain_dbi: 14.0,
            total_prbs: 50,
            coverage_radius_m: 300.0,
            cio_db: BTreeMap::new(),
        }
    }

    fn user_at(x: f64, y: f64) -> User {
        User {
            id: 0,
            position: Position::new(x, y),
            demand_bps: 500e3,
            rx_gain_dbi: 5.0,
        }
    }

    #[test]
    fn path_loss_values() {
        let c = RadioConstants::default();
        assert_abs_diff_eq!(path_loss_db(0.5, &c), 116.781, epsilon = 1e-3);
        assert_abs_diff_eq!(path_loss_db(0.01, &c), 73.357, epsilon = 1e-3);
        assert_abs_diff_eq!(path_loss_db(1.0, &c), 128.1, epsilon = 1e-12);
        assert_eq!(path_loss_db(0.0, &c), path_loss_db(0.035, &c));
    }

    #[test]
    fn default_noise_is_thermal_plus_figure() {
        let c = RadioConstants::default();
        assert_abs_diff_eq!(c.noise_dbm, -112.447, epsilon = 1e-3);
    }

    #[test]
    fn rsrp_values() {
        let c = RadioConstants::default();
        let bs = station(0, 0.0, 0.0);
        assert_abs_diff_eq!(
            rsrp_dbm(&bs, &user_at(500.0, 0.0), &c),
            -51.781,
            epsilon = 1e-3
        );
        let near = rsrp_dbm(&bs, &user_at(500.0, 0.0), &c);
        let far = rsrp_dbm(&bs, &user_at(1000.0, 0.0), &c);
        assert_abs_diff_eq!(near - far, 37.6 * 2f64.log10(), epsilon = 1e-9);
        let other = station(1, 1000.0, 0.0);
        assert_abs_diff_eq!(
            rsrp_dbm(&bs, &user_at(500.0, 0.0), &c),
            rsrp_dbm(&other, &user_at(500.0, 0.0), &c),
            epsilon = 1e-12
        );
    }

    #[test]
    fn sinr_single_and_pair() {
        let c = RadioConstants::default();
        let bs = station(0, 0.0, 0.0);
        let u = user_at(300.0, 0.0);
        let expected = db_to_linear(rsrp_dbm(&bs, &u, &c)) / db_to_linear(c.noise_dbm);
        let got = sinr(&u, &bs, std::slice::from_ref(&bs), &c);
        assert_abs_diff_eq!(got / expected, 1.0, epsilon = 1e-12);

        let pair = vec![station(0, 0.0, 0.0), station(1, 1000.0, 0.0)];
        let mid = user_at(500.0, 0.0);
        let s = sinr(&mid, &pair[0], &pair, &c);
        assert!((s - 1.0).abs() < 1e-6, "{s}");
    }

    #[test]
    fn prb_rate_values() {
        let c = RadioConstants::default();
        assert_abs_diff_eq!(prb_rate(15.0, &c), 720e3, epsilon = 1e-6);
        assert_eq!(prb_rate(0.0, &c), 0.0);
        assert_abs_diff_eq!(prb_rate(1.0, &c), 180e3, epsilon = 1e-6);
    }

    #[test]
    fn prb_demand_values() {
        assert_eq!(prb_demand(1e6, 720e3), Some(2));
        assert_eq!(prb_demand(720e3, 720e3), Some(1));
        assert_eq!(prb_demand(1.0, 5e5), Some(1));
        assert_eq!(prb_demand(1.0, 0.0), None);
        assert_eq!(prb_demand(1.0, f64::NAN), None);
    }

    #[test]
    fn load_values() {
        let bs = station(0, 0.0, 0.0);
        assert_eq!(bs_load(&bs, []), 0.0);
        assert_abs_diff_eq!(bs_load(&bs, [10, 15]), 0.5);
        assert_abs_diff_eq!(bs_load(&bs, [30, 30]), 1.2);
    }

    #[test]
    fn load_share_values() {
        let c = RadioConstants::default();
        let pair = vec![station(0, 0.0, 0.0), station(1, 1000.0, 0.0)];
        let mid = user_at(500.0, 0.0);
        let a = user_load_share(&mid, &pair[0], &pair, &c).unwrap();
        let b = user_load_share(&mid, &pair[1], &pair, &c).unwrap();
        assert_eq!(a, b);
        // 500 kbit/s at SINR≈1 needs ceil(500/180) = 3 PRBs of 50
        assert_abs_diff_eq!(a, 0.06, epsilon = 1e-12);

        let off = user_at(350.0, 0.0);
        let near = user_load_share(&off, &pair[0], &pair, &c).unwrap();
        let far = user_load_share(&off, &pair[1], &pair, &c).unwrap();
        assert!(far > near);
    }

    #[test]
    fn radio_map_matches_pointwise_functions() {
        let c = RadioConstants::default();
        let bss = vec![
            station(0, 0.0, 0.0),
            station(1, 500.0, 0.0),
            station(2, 0.0, 500.0),
        ];
        let users = vec![user_at(100.0, 50.0), user_at(260.0, 240.0)];
        let map = RadioMap::compute(&bss, &users, &c);
        for (u, user) in users.iter().enumerate() {
            for (i, bs) in bss.iter().enumerate() {
                let s = sinr(user, bs, &bss, &c);
                assert_abs_diff_eq!(map.sinr[u][i] / s, 1.0, epsilon = 1e-12);
                let share = user_load_share(user, bs, &bss, &c).unwrap();
                assert_eq!(map.load_share(u, i, 50), Some(share));
            }
        }
    }
}
