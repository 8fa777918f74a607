use passive_qkd::pipeline::*;
use passive_qkd::regions::PostSelectionConfig;

fn main() {
    let p = ProtocolParams::default();
    let ch = channel_for(10.0, Rotation::Misalignment { e_d: 0.02 }, &p).unwrap();
    let post = PostSelectionConfig { mu_max: 1.0, delta_z: 0.07, delta_xy: 0.1, delta_phi: 0.1, t_decoy: 0.04, t_decoy2: 0.02 };
    let a = passive_bb84(&post, &ch, &p).unwrap();
    println!("asym: rate={:.8e} y1={:.8} e1x={:.8} p1={:.6} qber={:.6}", a.rate, a.y1_lower, a.e1_upper, a.p1_signal, a.qber_z);
    for n in [1e12f64, 1e14, 1e16, 1e20, 1e30] {
        let f = passive_bb84_finite(&post, &ch, &p, n).unwrap();
        println!("N={n:.0e}: rate={:.8e} y1={:.8} e1x={:.8} qber={:.6}", f.rate, f.y1_lower, f.e1_upper, f.qber_z);
    }
}
