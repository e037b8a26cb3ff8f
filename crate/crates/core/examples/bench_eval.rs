use std::f64::consts::PI;
use std::time::Instant;
use vfmm_core::fmm::{evaluate, FmmParams};
use vfmm_core::geom::Vec3;
use vfmm_core::ParticleSet;

fn main() {
    let n = 32usize;
    let h = 2.0 * PI / n as f64;
    let mut pos = Vec::new();
    let mut strength = Vec::new();
    let mut s = 1u64;
    let mut rnd = || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    };
    for iz in 0..n {
        for iy in 0..n {
            for ix in 0..n {
                pos.push(Vec3::new(
                    -PI + (ix as f64 + 0.5) * h + 0.1 * h * rnd(),
                    -PI + (iy as f64 + 0.5) * h + 0.1 * h * rnd(),
                    -PI + (iz as f64 + 0.5) * h + 0.1 * h * rnd(),
                ));
                strength.push(Vec3::new(rnd(), rnd(), rnd()) * 0.01);
            }
        }
    }
    let src = ParticleSet::with_uniform_sigma(pos, strength, h);
    let params = FmmParams { p: 10, image_levels: 3, ..Default::default() };
    // warmup + 3 timed
    let _ = evaluate(&src.position, &src, &params, true).unwrap();
    let t0 = Instant::now();
    let mut stats = None;
    for _ in 0..3 {
        let (_, _, st) = evaluate(&src.position, &src, &params, true).unwrap();
        stats = Some(st);
    }
    let dt = t0.elapsed().as_secs_f64() / 3.0;
    let st = stats.unwrap();
    println!("N = {}  eval(u+grad) = {:.3} s", src.len(), dt);
    println!("  m2l {} m2p {} p2p_pairs {} corr_pairs {}", st.n_m2l, st.n_m2p, st.n_p2p_pairs, st.n_correction_pairs);
    println!("  build {:.3} up {:.3} trav {:.3} far {:.3} near {:.3} down {:.3} per {:.3} corr {:.3}",
        st.t_build, st.t_upward, st.t_traverse, st.t_far, st.t_near, st.t_down, st.t_periodic, st.t_correction);
}
