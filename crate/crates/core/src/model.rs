//! Affine-Gaussian subsystems and their interconnection into networks.
//!
//! A subsystem evolves as `x' = A(u)·x + b·u + D·w + c + diag(r)·z` with `z`
//! standard Gaussian. The coefficient matrix may depend on the chosen external
//! input, as in the room-temperature model where the heater valve enters the
//! diagonal term. Outputs are the states themselves.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Noise family of a subsystem. Only standard Gaussian noise ships.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    StandardGaussian,
}

/// Raw coefficients of an affine-Gaussian subsystem, validated by
/// [`SubsystemModel::new`]. Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemParams {
    pub state_lo: Vec<f64>,
    pub state_hi: Vec<f64>,
    /// External input values (finite set `U`).
    pub inputs: Vec<f64>,
    pub internal_lo: Vec<f64>,
    pub internal_hi: Vec<f64>,
    /// One `n × n` matrix per external input.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    /// `n × p` internal-input gain.
    pub d: Vec<f64>,
    /// Diagonal of the noise scale.
    pub r: Vec<f64>,
    pub lipschitz_x: f64,
    pub lipschitz_w: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsystemModel {
    p: SubsystemParams,
    noise: Noise,
}

impl SubsystemModel {
    pub fn new(p: SubsystemParams) -> Result<Self> {
        let n = p.state_lo.len();
        let m = p.internal_lo.len();
        if n == 0 || p.state_hi.len() != n {
            return Err(Error::config("state box needs matching, nonempty bounds"));
        }
        for i in 0..n {
            if !(p.state_lo[i] < p.state_hi[i]) {
                return Err(Error::config(format!(
                    "empty state interval in dimension {i}"
                )));
            }
        }
        if p.internal_hi.len() != m {
            return Err(Error::config("internal-input box needs matching bounds"));
        }
        for i in 0..m {
            if !(p.internal_lo[i] <= p.internal_hi[i]) {
                return Err(Error::config(format!(
                    "empty internal interval in dimension {i}"
                )));
            }
        }
        if p.inputs.is_empty() {
            return Err(Error::config("external input set is empty"));
        }
        if p.a.len() != p.inputs.len() || p.a.iter().any(|a| a.len() != n * n) {
            return Err(Error::config(
                "need one n×n state coefficient matrix per external input",
            ));
        }
        if p.b.len() != n || p.c.len() != n || p.r.len() != n || p.d.len() != n * m {
            return Err(Error::config(
                "coefficient dimensions do not match the state box",
            ));
        }
        if p.r.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
            return Err(Error::config("noise scale must be positive and finite"));
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(p.lipschitz_x) || !finite_nonneg(p.lipschitz_w) {
            return Err(Error::config(
                "Lipschitz constants must be finite and non-negative",
            ));
        }
        Ok(SubsystemModel {
            p,
            noise: Noise::StandardGaussian,
        })
    }

    /// Scalar-state subsystem with `a` given per external input.
    #[allow(clippy::too_many_arguments)]
    pub fn scalar(
        state: (f64, f64),
        inputs: Vec<f64>,
        a: Vec<f64>,
        b: f64,
        c: f64,
        d: Vec<f64>,
        internal: Vec<(f64, f64)>,
        r: f64,
    ) -> Result<Self> {
        Self::new(SubsystemParams {
            state_lo: vec![state.0],
            state_hi: vec![state.1],
            inputs,
            internal_lo: internal.iter().map(|i| i.0).collect(),
            internal_hi: internal.iter().map(|i| i.1).collect(),
            a: a.into_iter().map(|v| vec![v]).collect(),
            b: vec![b],
            c: vec![c],
            d,
            r: vec![r],
            lipschitz_x: 0.0,
            lipschitz_w: 0.0,
        })
    }

    pub fn with_lipschitz(mut self, h_x: f64, h_w: f64) -> Result<Self> {
        self.p.lipschitz_x = h_x;
        self.p.lipschitz_w = h_w;
        Self::new(self.p)
    }

    pub fn params(&self) -> &SubsystemParams {
        &self.p
    }
    pub fn noise(&self) -> Noise {
        self.noise
    }
    pub fn state_dim(&self) -> usize {
        self.p.state_lo.len()
    }
    pub fn internal_dim(&self) -> usize {
        self.p.internal_lo.len()
    }
    pub fn n_inputs(&self) -> usize {
        self.p.inputs.len()
    }
    pub fn input_value(&self, u: usize) -> f64 {
        self.p.inputs[u]
    }
    pub fn state_box(&self) -> (&[f64], &[f64]) {
        (&self.p.state_lo, &self.p.state_hi)
    }
    pub fn internal_box(&self) -> (&[f64], &[f64]) {
        (&self.p.internal_lo, &self.p.internal_hi)
    }
    pub fn noise_scale(&self) -> &[f64] {
        &self.p.r
    }
    pub fn lipschitz(&self) -> (f64, f64) {
        (self.p.lipschitz_x, self.p.lipschitz_w)
    }

    /// Deterministic part `A(u)·x + b·u + c` written into `out`.
    #[inline]
    pub fn drift_into(&self, x: &[f64], u: usize, out: &mut [f64]) {
        let n = self.state_dim();
        let a = &self.p.a[u];
        let uv = self.p.inputs[u];
        for i in 0..n {
            let mut acc = self.p.b[i] * uv + self.p.c[i];
            for j in 0..n {
                acc += a[i * n + j] * x[j];
            }
            out[i] = acc;
        }
    }

    /// Internal-input contribution `D·w` written into `out`.
    #[inline]
    pub fn coupling_into(&self, w: &[f64], out: &mut [f64]) {
        let m = self.internal_dim();
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..m {
                acc += self.p.d[i * m + j] * w[j];
            }
            *o = acc;
        }
    }

    /// Mean of the next state.
    pub fn mean_into(&self, x: &[f64], u: usize, w: &[f64], out: &mut [f64]) {
        self.drift_into(x, u, out);
        let m = self.internal_dim();
        for (i, o) in out.iter_mut().enumerate() {
            for j in 0..m {
                *o += self.p.d[i * m + j] * w[j];
            }
        }
    }

    /// One step of the dynamics. The result is not clamped to the state box.
    pub fn step(&self, x: &[f64], u: usize, w: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let n = self.state_dim();
        if x.len() != n || z.len() != n {
            return Err(Error::config(format!(
                "state/noise dimension mismatch: expected {n}, got {} and {}",
                x.len(),
                z.len()
            )));
        }
        if w.len() != self.internal_dim() {
            return Err(Error::config(format!(
                "internal input has dimension {}, expected {}",
                w.len(),
                self.internal_dim()
            )));
        }
        if u >= self.n_inputs() {
            return Err(Error::config(format!(
                "external input index {u} out of range"
            )));
        }
        let mut out = vec![0.0; n];
        self.mean_into(x, u, w, &mut out);
        for i in 0..n {
            out[i] += self.p.r[i] * z[i];
        }
        Ok(out)
    }

    /// Lipschitz constants of the Gaussian transition density with respect to
    /// the state and the internal input, derived analytically. Scalar states
    /// only.
    pub fn gaussian_kernel_lipschitz(&self) -> Result<(f64, f64)> {
        if self.state_dim() != 1 {
            return Err(Error::Unsupported(
                "analytic Lipschitz constants are only derived for scalar states".into(),
            ));
        }
        let r = self.p.r[0];
        if !(r > 0.0) {
            return Err(Error::Unsupported("zero noise has no density".into()));
        }
        let peak = 1.0 / (r * r * libm::sqrt(2.0 * core::f64::consts::PI * core::f64::consts::E));
        let a_max = self.p.a.iter().map(|a| a[0].abs()).fold(0.0, f64::max);
        let d_l1: f64 = self.p.d.iter().map(|d| d.abs()).sum();
        Ok((a_max * peak, d_l1 * peak))
    }
}

/// Room-temperature parameters: conduction `psi`, outside exchange `beta`,
/// heater gain `gamma`, heater and outside temperatures.
pub mod room {
    pub const PSI: f64 = 0.001;
    pub const BETA: f64 = 0.4;
    pub const GAMMA: f64 = 0.5;
    pub const T_HEATER: f64 = 30.0;
    pub const T_OUTSIDE: f64 = -1.0;
    pub const NOISE: f64 = 0.1;
    /// Centers of six equal partitions of `[1.15, 1.20]`, rounded to four
    /// decimals.
    pub const VALVE: [f64; 6] = [1.1542, 1.1625, 1.1708, 1.1792, 1.1875, 1.1958];
}

/// Road-traffic cell parameters.
pub mod traffic {
    /// Sampling interval in seconds.
    pub const TAU: f64 = 18.0;
    /// Free-flow speed in km/h.
    pub const SPEED: f64 = 45.0;
    /// Cell length in km.
    pub const LENGTH: f64 = 0.5;
    pub const EXIT_RATIO: f64 = 0.5;
    pub const ENTRY: f64 = 5.0;
    pub const NOISE: f64 = 1.7;

    /// Fraction of a cell's vehicles moving on during one interval.
    pub fn flow() -> f64 {
        TAU / 3600.0 * SPEED / LENGTH
    }
}

pub fn room_subsystem() -> SubsystemModel {
    use room::*;
    let a = VALVE
        .iter()
        .map(|u| 1.0 - 2.0 * PSI - BETA - GAMMA * u)
        .collect();
    SubsystemModel::scalar(
        (17.0, 18.0),
        VALVE.to_vec(),
        a,
        GAMMA * T_HEATER,
        BETA * T_OUTSIDE,
        vec![PSI, PSI],
        vec![(17.0, 18.0), (17.0, 18.0)],
        NOISE,
    )
    .expect("room parameters are valid")
}

pub fn traffic_subsystem() -> SubsystemModel {
    use traffic::*;
    let a = 1.0 - flow() - EXIT_RATIO;
    SubsystemModel::scalar(
        (0.0, 20.0),
        vec![0.0, 1.0],
        vec![a, a],
        ENTRY,
        0.0,
        vec![flow()],
        vec![(0.0, 20.0)],
        NOISE,
    )
    .expect("traffic parameters are valid")
}

/// One internal-input channel of a subsystem, filled from a neighbor output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wire {
    pub source: usize,
    pub component: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    subsystems: Vec<SubsystemModel>,
    wiring: Vec<Vec<Wire>>,
}

impl NetworkModel {
    pub fn new(subsystems: Vec<SubsystemModel>, wiring: Vec<Vec<Wire>>) -> Result<Self> {
        let n = subsystems.len();
        if n == 0 {
            return Err(Error::config("network has no subsystems"));
        }
        if wiring.len() != n {
            return Err(Error::config("need one wiring list per subsystem"));
        }
        for (i, (sys, wires)) in subsystems.iter().zip(&wiring).enumerate() {
            if wires.len() != sys.internal_dim() {
                return Err(Error::config(format!(
                    "subsystem {i} has {} internal inputs but {} wires",
                    sys.internal_dim(),
                    wires.len()
                )));
            }
            for w in wires {
                if w.source >= n || w.component >= subsystems[w.source].state_dim() {
                    return Err(Error::config(format!(
                        "subsystem {i} wired to missing output {}.{}",
                        w.source, w.component
                    )));
                }
            }
        }
        Ok(NetworkModel { subsystems, wiring })
    }

    pub fn len(&self) -> usize {
        self.subsystems.len()
    }
    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }
    pub fn subsystems(&self) -> &[SubsystemModel] {
        &self.subsystems
    }
    pub fn subsystem(&self, i: usize) -> &SubsystemModel {
        &self.subsystems[i]
    }
    pub fn wiring(&self) -> &[Vec<Wire>] {
        &self.wiring
    }

    /// Internal input of subsystem `i` given all current states.
    pub fn internal_input(&self, i: usize, x: &[Vec<f64>]) -> Vec<f64> {
        self.wiring[i]
            .iter()
            .map(|w| x[w.source][w.component])
            .collect()
    }

    pub fn step(&self, x: &[Vec<f64>], u: &[usize], z: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let n = self.len();
        if x.len() != n || u.len() != n || z.len() != n {
            return Err(Error::config(format!(
                "network of {n} needs {n} states, inputs and noises"
            )));
        }
        (0..n)
            .map(|i| {
                let w = self.internal_input(i, x);
                self.subsystems[i].step(&x[i], u[i], &w, &z[i])
            })
            .collect()
    }

    /// Circular network of `n` rooms, each coupled to both neighbors.
    pub fn room(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::config("room network needs at least 3 rooms"));
        }
        let subsystems = vec![room_subsystem(); n];
        let wiring = (0..n)
            .map(|i| {
                vec![
                    Wire {
                        source: (i + n - 1) % n,
                        component: 0,
                    },
                    Wire {
                        source: (i + 1) % n,
                        component: 0,
                    },
                ]
            })
            .collect();
        Self::new(subsystems, wiring)
    }

    /// Ring road of `n` cells, each fed by its upstream neighbor.
    pub fn traffic(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::config("traffic network needs at least 2 cells"));
        }
        let subsystems = vec![traffic_subsystem(); n];
        let wiring = (0..n)
            .map(|i| {
                vec![Wire {
                    source: (i + n - 1) % n,
                    component: 0,
                }]
            })
            .collect();
        Self::new(subsystems, wiring)
    }
}
