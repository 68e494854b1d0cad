//! Intelligent Driver Model car-following law.

/// IDM parameters for one link (desired speed comes from the link's speed
/// limit; the rest are fleet-wide defaults).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmParams {
    /// Desired speed, m/s.
    pub v0_ms: f64,
    /// Maximum acceleration, m/s^2.
    pub a_max: f64,
    /// Comfortable deceleration, m/s^2.
    pub b_comf: f64,
    /// Minimum gap at standstill, m.
    pub s0_m: f64,
    /// Desired time headway, s.
    pub headway_s: f64,
    /// Acceleration exponent.
    pub delta: f64,
}

/// Fleet-wide IDM defaults (standard urban values); `v0_ms` is replaced
/// per link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmDefaults {
    pub a_max: f64,
    pub b_comf: f64,
    pub s0_m: f64,
    pub headway_s: f64,
    pub delta: f64,
}

impl Default for IdmDefaults {
    fn default() -> Self {
        IdmDefaults {
            a_max: 1.5,
            b_comf: 2.0,
            s0_m: 2.0,
            headway_s: 1.2,
            delta: 4.0,
        }
    }
}

impl IdmDefaults {
    pub fn for_link(&self, v0_ms: f64) -> IdmParams {
        IdmParams {
            v0_ms,
            a_max: self.a_max,
            b_comf: self.b_comf,
            s0_m: self.s0_m,
            headway_s: self.headway_s,
            delta: self.delta,
        }
    }
}

/// IDM acceleration. `leader` is `(leader speed m/s, bumper gap m)`; the
/// gap must be positive. Without a leader the interaction term drops out.
///
/// `a = a_max * (1 - (v/v0)^delta - (s*/gap)^2)` with
/// `s* = s0 + v*T + v*(v - v_lead) / (2*sqrt(a_max*b))`.
pub fn idm_acceleration(v_ms: f64, leader: Option<(f64, f64)>, p: &IdmParams) -> f64 {
    let free = 1.0 - (v_ms / p.v0_ms).powf(p.delta);
    let interaction = match leader {
        Some((v_lead, gap)) => {
            debug_assert!(gap > 0.0, "leader gap must be positive");
            let s_star = p.s0_m
                + v_ms * p.headway_s
                + v_ms * (v_ms - v_lead) / (2.0 * (p.a_max * p.b_comf).sqrt());
            (s_star / gap).powi(2)
        }
        None => 0.0,
    };
    p.a_max * (free - interaction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> IdmParams {
        IdmDefaults::default().for_link(40.0 / 3.6)
    }

    #[test]
    fn free_flow_equilibrium() {
        let p = params();
        assert_relative_eq!(idm_acceleration(p.v0_ms, None, &p), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn standstill_free_acceleration() {
        let p = params();
        assert_relative_eq!(idm_acceleration(0.0, None, &p), p.a_max, epsilon = 1e-12);
    }

    #[test]
    fn standing_queue_equilibrium() {
        let p = params();
        // Stopped behind a stopped leader at exactly the minimum gap.
        assert_relative_eq!(
            idm_acceleration(0.0, Some((0.0, p.s0_m)), &p),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn never_exceeds_max_acceleration() {
        let p = params();
        for v in [0.0, 3.0, 8.0, p.v0_ms] {
            for leader in [None, Some((0.0, 5.0)), Some((15.0, 40.0))] {
                let a = idm_acceleration(v, leader, &p);
                assert!(a.is_finite());
                assert!(a <= p.a_max + 1e-12);
            }
        }
    }
}
