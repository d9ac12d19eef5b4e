use compsynth_core::model::{room_subsystem, traffic_subsystem, NetworkModel, SubsystemModel};
use proptest::prelude::*;

fn density(m: &SubsystemModel, y: f64, x: f64, u: usize, w: &[f64]) -> f64 {
    let mut mean = [0.0];
    m.mean_into(&[x], u, w, &mut mean);
    let r = m.noise_scale()[0];
    let z = (y - mean[0]) / r;
    (-0.5 * z * z).exp() / (r * (2.0 * std::f64::consts::PI).sqrt())
}

// Largest difference quotient of the transition density over a fine sweep of
// the next state, for a small step in x (or in every internal channel).
fn finite_difference(m: &SubsystemModel, along_x: bool) -> f64 {
    let (lo, hi) = (m.state_box().0[0], m.state_box().1[0]);
    let w0: Vec<f64> = m.internal_box().0.to_vec();
    let x0 = 0.5 * (lo + hi);
    let h = 1e-6;
    let r = m.noise_scale()[0];
    let mut worst: f64 = 0.0;
    for u in 0..m.n_inputs() {
        let mut mean = [0.0];
        m.mean_into(&[x0], u, &w0, &mut mean);
        for i in -4000..=4000 {
            let y = mean[0] + i as f64 * 1e-3 * r;
            let (a, b) = if along_x {
                (density(m, y, x0 + h, u, &w0), density(m, y, x0, u, &w0))
            } else {
                // Moving every channel by h shifts the mean by (Σ d_j)·h,
                // which is Σ|d_j|·h for same-sign couplings.
                let w1: Vec<f64> = w0.iter().map(|v| v + h).collect();
                (density(m, y, x0, u, &w1), density(m, y, x0, u, &w0))
            };
            worst = worst.max((a - b).abs() / h);
        }
    }
    worst
}

#[test]
fn kernel_lipschitz_matches_finite_differences() {
    for m in [room_subsystem(), traffic_subsystem()] {
        let (h_x, h_w) = m.gaussian_kernel_lipschitz().unwrap();
        let fd_x = finite_difference(&m, true);
        let fd_w = finite_difference(&m, false);
        assert!(
            (fd_x - h_x).abs() <= 0.01 * h_x,
            "state: analytic {h_x}, numeric {fd_x}"
        );
        assert!(
            (fd_w - h_w).abs() <= 0.01 * h_w,
            "internal: analytic {h_w}, numeric {fd_w}"
        );
    }
}

#[test]
fn lipschitz_scales_with_inverse_noise_squared() {
    let base = traffic_subsystem();
    let mut p = base.params().clone();
    p.r = vec![2.0 * p.r[0]];
    let wide = SubsystemModel::new(p).unwrap();
    let (a, b) = (
        base.gaussian_kernel_lipschitz().unwrap(),
        wide.gaussian_kernel_lipschitz().unwrap(),
    );
    assert!((a.0 / b.0 - 4.0).abs() < 1e-12);
    assert!((a.1 / b.1 - 4.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn step_is_mean_plus_scaled_noise(
        x in 17.0..18.0f64,
        u in 0..6usize,
        w0 in 17.0..18.0f64,
        w1 in 17.0..18.0f64,
        z in -5.0..5.0f64,
    ) {
        let m = room_subsystem();
        let mut mean = [0.0];
        m.mean_into(&[x], u, &[w0, w1], &mut mean);
        let next = m.step(&[x], u, &[w0, w1], &[z]).unwrap();
        prop_assert!((next[0] - mean[0] - m.noise_scale()[0] * z).abs() < 1e-12);
        // affine in the state: the increment over x is the per-input gain
        let next2 = m.step(&[x + 0.5], u, &[w0, w1], &[z]).unwrap();
        let gain = m.params().a[u][0];
        prop_assert!((next2[0] - next[0] - 0.5 * gain).abs() < 1e-9);
    }

    #[test]
    fn network_step_feeds_neighbors(
        xs in prop::collection::vec(0.0..20.0f64, 7),
        us in prop::collection::vec(0..2usize, 7),
        zs in prop::collection::vec(-3.0..3.0f64, 7),
    ) {
        let net = NetworkModel::traffic(7).unwrap();
        let x: Vec<Vec<f64>> = xs.iter().map(|&v| vec![v]).collect();
        let z: Vec<Vec<f64>> = zs.iter().map(|&v| vec![v]).collect();
        let next = net.step(&x, &us, &z).unwrap();
        let m = traffic_subsystem();
        for i in 0..7 {
            let upstream = xs[(i + 6) % 7];
            let alone = m.step(&[xs[i]], us[i], &[upstream], &[zs[i]]).unwrap();
            prop_assert_eq!(next[i][0], alone[0]);
        }
    }

    #[test]
    fn room_ring_is_symmetric(shift in 0..20usize, xs in prop::collection::vec(17.0..18.0f64, 20)) {
        // rotating the states rotates the noiseless successor
        let net = NetworkModel::room(20).unwrap();
        let x: Vec<Vec<f64>> = xs.iter().map(|&v| vec![v]).collect();
        let rot: Vec<Vec<f64>> = (0..20).map(|i| x[(i + shift) % 20].clone()).collect();
        let u = vec![2; 20];
        let z = vec![vec![0.0]; 20];
        let a = net.step(&x, &u, &z).unwrap();
        let b = net.step(&rot, &u, &z).unwrap();
        for i in 0..20 {
            prop_assert!((b[i][0] - a[(i + shift) % 20][0]).abs() < 1e-12);
        }
    }
}
