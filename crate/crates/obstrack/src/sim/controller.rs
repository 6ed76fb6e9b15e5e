//! The black-box controller interface and the built-in reference policy.

use super::{Control, Observation, SimError};

/// A controller maps one observation to one control. Implementations must be
/// deterministic in the observation sequence they are fed.
pub trait Controller {
    fn control(&mut self, obs: &Observation) -> Result<Control, SimError>;
}

/// Deterministic single-frame gap follower.
///
/// Picks the widest run of near-deepest image columns (ties broken toward
/// the image center, then leftward) and steers the wheels toward a clamped
/// fraction of that bearing; accelerates while the view directly ahead is
/// clear and brakes as it closes. Intentionally myopic: no memory, no
/// planning, so adversarial obstacle funnels can force it into the shoulders
/// or a late swerve.
#[derive(Debug, Clone)]
pub struct ReferenceController {
    /// Steering-rate gain on the wheel-angle error.
    pub steer_gain: f64,
    /// Fraction of the gap bearing used as the wheel-angle target.
    pub bearing_gain: f64,
    /// Wheel-angle target clamp; keeps the heading rate tame at 1 Hz control.
    pub alpha_budget: f64,
    /// Columns within this many bins of the deepest count as "deep".
    pub depth_tolerance_bins: usize,
    /// Safety margin, in columns, kept from the chosen gap's edges.
    pub gap_margin_cols: usize,
    pub accel_gain: f64,
    /// Path depth at which the forward drive term reaches zero.
    pub brake_distance: f64,
    /// Small forward bias so the car never parks in front of an obstacle.
    pub creep: f64,
    /// Braking gain against obstacles in the dead-ahead window.
    pub center_brake_gain: f64,
    /// Dead-ahead depth at which braking starts.
    pub center_brake_distance: f64,
    /// Wheel angle beyond which the car counts as committed to a turn.
    pub commit_angle: f64,
    /// Acceleration floor applied while committed, so a braked car whose
    /// wheels point at a gap creeps and rotates free instead of parking.
    pub commit_floor: f64,
    /// Half-width in columns of the "ahead" windows used for speed control.
    pub ahead_window: usize,
    /// Sensor constants baked into the policy (it was built for this car).
    pub sensor_range: f64,
    pub sensor_half_angle: f64,
    pub max_steer_rate: f64,
}

impl Default for ReferenceController {
    fn default() -> Self {
        ReferenceController {
            steer_gain: 0.8,
            bearing_gain: 0.5,
            alpha_budget: 0.30,
            depth_tolerance_bins: 1,
            gap_margin_cols: 10,
            accel_gain: 0.5,
            brake_distance: 0.55,
            creep: 0.04,
            center_brake_gain: 1.5,
            center_brake_distance: 1.2,
            commit_angle: 0.12,
            commit_floor: 0.10,
            ahead_window: 10,
            sensor_range: 2.0,
            sensor_half_angle: 72f64.to_radians(),
            max_steer_rate: 10f64.to_radians(),
        }
    }
}

impl ReferenceController {
    fn bearing_of(&self, col: f64, cols: usize) -> f64 {
        -self.sensor_half_angle + col * (2.0 * self.sensor_half_angle) / (cols as f64 - 1.0)
    }
}

impl Controller for ReferenceController {
    fn control(&mut self, obs: &Observation) -> Result<Control, SimError> {
        let cols = obs.cols;
        let bins: Vec<usize> = (0..cols).map(|c| obs.hit_row(c)).collect();
        let deepest = *bins.iter().max().expect("nonempty image");
        let floor = deepest.saturating_sub(self.depth_tolerance_bins);

        // Widest run of deep columns; ties go to the run whose center is
        // closest to the image center, then to the lower start index.
        let image_center = (cols as f64 - 1.0) / 2.0;
        let mut best: Option<(usize, f64, usize)> = None; // (len, center offset, start)
        let mut col = 0;
        while col < cols {
            if bins[col] >= floor {
                let start = col;
                while col < cols && bins[col] >= floor {
                    col += 1;
                }
                let len = col - start;
                let center = (start + col - 1) as f64 / 2.0;
                let offset = (center - image_center).abs();
                let better = match &best {
                    None => true,
                    Some((blen, boff, bstart)) => {
                        len > *blen
                            || (len == *blen && offset < *boff)
                            || (len == *blen && offset == *boff && start < *bstart)
                    }
                };
                if better {
                    best = Some((len, offset, start));
                }
            } else {
                col += 1;
            }
        }
        // Aim at the run point nearest the image center, padded away from
        // the run edges: the smallest decisive deviation that clears the
        // blocked columns.
        let (len, _, start) = best.expect("at least one run");
        let end = start + len - 1;
        let margin = self.gap_margin_cols;
        let target_col = if len > 2 * margin {
            image_center.clamp((start + margin) as f64, (end - margin) as f64)
        } else {
            (start + end) as f64 / 2.0
        };
        let target_bearing = self.bearing_of(target_col, cols);

        let alpha_target =
            (self.bearing_gain * target_bearing).clamp(-self.alpha_budget, self.alpha_budget);
        let steer_rate = (self.steer_gain * (alpha_target - obs.alpha))
            .clamp(-self.max_steer_rate, self.max_steer_rate);

        // Speed from two windows (depth read off the bin's far edge): drive
        // by the clearance along the intended path, brake against whatever
        // sits dead ahead, and keep a small forward floor outside the
        // hard-stop zone so the car creeps and turns free instead of
        // parking nose-to-obstacle forever.
        let bin_size = self.sensor_range / obs.rows as f64;
        let depth_of = |c: usize| (bins[c] as f64 + 1.0) * bin_size;
        let tc = target_col.round() as usize;
        let p0 = tc.saturating_sub(self.ahead_window).max(start);
        let p1 = (tc + self.ahead_window).min(end);
        let ahead_path = (p0..=p1).map(depth_of).fold(f64::INFINITY, f64::min);
        let mid = cols / 2;
        let c0 = mid.saturating_sub(self.ahead_window);
        let c1 = (mid + self.ahead_window).min(cols - 1);
        let ahead_center = (c0..=c1).map(depth_of).fold(f64::INFINITY, f64::min);

        let drive = self.accel_gain * (ahead_path - self.brake_distance) + self.creep;
        let brake = self.center_brake_gain * (self.center_brake_distance - ahead_center).max(0.0);
        let mut accel = drive - brake;
        if obs.alpha.abs() > self.commit_angle || alpha_target.abs() > self.commit_angle {
            accel = accel.max(self.commit_floor);
        }

        Ok(Control { accel, steer_rate })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_with_bins(bins: &[usize], alpha: f64) -> Observation {
        let mut obs = Observation::empty(alpha, bins.len(), 50);
        for (c, &b) in bins.iter().enumerate() {
            obs.fill_column(c, b);
        }
        obs
    }

    #[test]
    fn symmetric_empty_view_goes_straight() {
        let bins = vec![49usize; 100];
        let obs = image_with_bins(&bins, 0.0);
        let u = ReferenceController::default().control(&obs).unwrap();
        assert_eq!(u.steer_rate, 0.0);
        assert!(u.accel > 0.0);
    }

    #[test]
    fn blocked_left_half_steers_positive() {
        let mut bins = vec![49usize; 100];
        for b in bins.iter_mut().take(50) {
            *b = 8;
        }
        let obs = image_with_bins(&bins, 0.0);
        let u = ReferenceController::default().control(&obs).unwrap();
        assert!(u.steer_rate > 0.0);
        assert!(u.steer_rate <= 10f64.to_radians());
    }

    #[test]
    fn near_wall_brakes() {
        let bins = vec![3usize; 100];
        let obs = image_with_bins(&bins, 0.0);
        let u = ReferenceController::default().control(&obs).unwrap();
        assert!(u.accel < 0.0);
    }
}
