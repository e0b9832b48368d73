//! Two int8 weights share one wide multiply; both products come back exact.

use gemflow::accel::AcceleratorConfig;
use gemflow::dsp_pack::{estimate_array_dsps, pack, packed_mac, unpack};

fn main() -> gemflow::Result<()> {
    for (w1, w2, a) in [(3i8, -5i8, 7i8), (-128, 127, -128), (0, -1, 99)] {
        let pp = pack(w1, w2);
        let (p1, p2) = packed_mac(pp, a);
        println!("pack({w1:4}, {w2:4}) = {:10}  x {a:4} -> ({p1:6}, {p2:6})  unpack {:?}", pp.p, unpack(pp));
        assert_eq!((p1, p2), (w1 as i32 * a as i32, w2 as i32 * a as i32));
    }
    for cfg in [AcceleratorConfig::baseline(), AcceleratorConfig::ours()] {
        let n = estimate_array_dsps(cfg.dim, cfg.dsp_packing)?;
        println!("{}x{} array, packing {}: {n} multipliers", cfg.dim, cfg.dim, cfg.dsp_packing);
    }
    Ok(())
}
