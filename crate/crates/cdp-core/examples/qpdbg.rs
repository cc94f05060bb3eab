use cdp_core::cndp::{self, synthetic_four_link, DemandScenario};
use cdp_core::{run_esqm, solve_direction, EsqmConfig};
use nalgebra::DVector;

fn main() {
    let inst = DemandScenario::High.apply(&synthetic_four_link()).unwrap();
    let (_, prog, x0) = cndp::cndp_program(&inst, 0.1, 1.0).unwrap();
    let config = EsqmConfig {
        alpha: 100.0,
        p0: 0.01,
        rho_p: 0.05,
        c_p: 50.0,
        beta: 0.7,
        sigma: 0.5,
        d_tol: 1e-4,
        max_iter: 2000,
        max_backtracks: 60,
    };
    // walk manually to find the failing iterate
    let mut x = x0.clone();
    let mut p = config.p0;
    for k in 0..2000 {
        match solve_direction(&prog, &x, p, config.alpha) {
            Ok(dir) => {
                let d_norm = dir.d_norm();
                if k % 10 == 0 || d_norm < 2e-4 {
                    println!(
                        "k {k:4} p {p:.3} |d| {d_norm:.6e} lambda {:.4} phi0 {:.4} phi1 {:+.6e}",
                        dir.lambda, dir.phi0_x, dir.phi1_x
                    );
                }
                if d_norm <= 1e-4 && dir.phi1_x <= 1e-6 {
                    println!("stop at k={k}");
                    break;
                }
                let ls = cdp_core::backtrack(&prog, &x, &dir.d, p, config.alpha, 0.7, 0.5, 60).unwrap();
                let p_next = cdp_core::update_penalty(p, dir.t_lin, d_norm, 50.0, 0.05);
                x = ls.x_new;
                p = p_next;
            }
            Err(e) => {
                println!("k {k}: direction failed: {e}");
                println!("x = {:?}", x.as_slice());
                println!("p = {p}");
                break;
            }
        }
    }
    let _ = run_esqm(&prog, &x0, &config);
}
