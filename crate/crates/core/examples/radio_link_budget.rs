// Link budget of one user between two stations: path loss, RSRP, SINR and
// the PRBs (and load share) each station would spend on it.

use std::collections::BTreeMap;

use loadsync::radio::{
    linear_to_db, path_loss_db, prb_demand, prb_rate, rsrp_dbm, sinr, user_load_share, BaseStation,
    Position, RadioConstants, User,
};

fn station(id: usize, x: f64) -> BaseStation {
    BaseStation {
        id,
        position: Position::new(x, 0.0),
        tx_power_dbm: 46.0,
        antenna_gain_dbi: 14.0,
        total_prbs: 50,
        coverage_radius_m: 300.0,
        cio_db: BTreeMap::new(),
    }
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let constants = RadioConstants::default();
    let stations = [station(0, 0.0), station(1, 500.0)];
    let user = User {
        id: 0,
        position: Position::new(180.0, 40.0),
        demand_bps: 500e3,
        rx_gain_dbi: 5.0,
    };

    println!("noise per PRB: {:.3} dBm", constants.noise_dbm);
    for bs in &stations {
        let d_km = bs.position.distance_m(&user.position) / 1000.0;
        let s = sinr(&user, bs, &stations, &constants);
        let rate = prb_rate(s, &constants);
        let prbs = prb_demand(user.demand_bps, rate).ok_or("user cannot be served")?;
        let share = user_load_share(&user, bs, &stations, &constants)?;
        println!(
            "bs {}: d = {:.0} m, PL = {:.1} dB, RSRP = {:.1} dBm, SINR = {:.1} dB, {:.0} kbit/s per PRB, {prbs} PRBs, load share {share:.2}",
            bs.id,
            d_km * 1000.0,
            path_loss_db(d_km, &constants),
            rsrp_dbm(bs, &user, &constants),
            linear_to_db(s),
            rate / 1e3,
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
