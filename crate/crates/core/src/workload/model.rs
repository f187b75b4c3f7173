use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// A scheduled buffering dip: FPS is scaled by `1 - depth` during
/// `[start_s, start_s + duration_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferDip {
    pub start_s: f64,
    pub duration_s: f64,
    pub depth: f64,
}

/// Response curves of the simulated transcoding service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadModel {
    pub f_max: f64,
    pub kappa: f64,
    pub p_idle: f64,
    pub p_per_thread: f64,
    pub noise_fps: f64,
    pub noise_power: f64,
    pub seed: u64,
    pub buffer_schedule: Vec<BufferDip>,
    pub max_threads: u32,
    pub initial_threads: u32,
}

impl Default for WorkloadModel {
    fn default() -> Self {
        Self {
            f_max: 40.0,
            kappa: 6.0,
            p_idle: 13.0,
            p_per_thread: 0.55,
            noise_fps: 0.0,
            noise_power: 0.0,
            seed: 0,
            buffer_schedule: Vec::new(),
            max_threads: 16,
            initial_threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid workload model: {0}")]
pub struct ModelError(pub String);

impl WorkloadModel {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError(m.to_string()));
        if !(self.f_max > 0.0) {
            return bad("f_max must be positive");
        }
        if !(self.kappa > 0.0) {
            return bad("kappa must be positive");
        }
        if !(self.p_idle >= 0.0) {
            return bad("p_idle must be non-negative");
        }
        if self.p_per_thread < 0.0 || self.noise_fps < 0.0 || self.noise_power < 0.0 {
            return bad("slopes and noise levels must be non-negative");
        }
        if self
            .buffer_schedule
            .iter()
            .any(|d| !(0.0..=1.0).contains(&d.depth) || d.duration_s < 0.0)
        {
            return bad("buffer depths must lie in [0,1] with non-negative durations");
        }
        if self.initial_threads > self.max_threads {
            return bad("initial_threads exceeds max_threads");
        }
        Ok(())
    }

    pub fn noiseless(mut self) -> Self {
        self.noise_fps = 0.0;
        self.noise_power = 0.0;
        self
    }

    /// Deepest dip active at `t_s` seconds of simulated time.
    pub fn active_buffer_depth(&self, t_s: f64) -> f64 {
        self.buffer_schedule
            .iter()
            .filter(|d| d.start_s <= t_s && t_s < d.start_s + d.duration_s)
            .map(|d| d.depth)
            .fold(0.0, f64::max)
    }

    pub fn fps_noiseless(&self, threads: u32, t_s: f64) -> f64 {
        if threads == 0 {
            return 0.0;
        }
        let capacity = self.f_max * (1.0 - (-(threads as f64) / self.kappa).exp());
        capacity * (1.0 - self.active_buffer_depth(t_s))
    }

    pub fn power_noiseless(&self, threads: u32) -> f64 {
        self.p_idle + self.p_per_thread * threads as f64
    }

    /// Thread counts whose steady-state noiseless FPS lies in `[lo, hi]`.
    pub fn fulfilling_threads(&self, lo: f64, hi: f64) -> Vec<u32> {
        (0..=self.max_threads)
            .filter(|&t| {
                let f = self.fps_noiseless(t, f64::NEG_INFINITY);
                lo <= f && f <= hi
            })
            .collect()
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R, sd: f64) -> f64 {
    if sd > 0.0 {
        Normal::new(0.0, sd).map_or(0.0, |n| n.sample(rng))
    } else {
        0.0
    }
}

/// FPS at `threads` and simulated time `t_s`; no noise draw when the noise
/// level is zero. Exactly zero with no threads.
pub fn fps_model<R: Rng + ?Sized>(threads: u32, t_s: f64, model: &WorkloadModel, rng: &mut R) -> f64 {
    if threads == 0 {
        return 0.0;
    }
    (model.fps_noiseless(threads, t_s) + gaussian(rng, model.noise_fps)).max(0.0)
}

/// Apparent power draw in W, clamped to at least half the idle draw.
pub fn power_model<R: Rng + ?Sized>(threads: u32, model: &WorkloadModel, rng: &mut R) -> f64 {
    (model.power_noiseless(threads) + gaussian(rng, model.noise_power)).max(model.p_idle / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn fps_closed_form() {
        let m = WorkloadModel::default();
        assert_eq!(fps_model(0, 0.0, &m, &mut rng()), 0.0);
        let six = 40.0 * (1.0 - (-1.0f64).exp());
        assert!((fps_model(6, 0.0, &m, &mut rng()) - six).abs() < 1e-12);
        assert!((six - 25.285).abs() < 1e-3);
        let sixteen = fps_model(16, 0.0, &m, &mut rng());
        assert!((sixteen - 37.22).abs() < 5e-3, "{sixteen}");
    }

    #[test]
    fn power_linear() {
        let m = WorkloadModel::default();
        assert_eq!(power_model(0, &m, &mut rng()), 13.0);
        assert!((power_model(6, &m, &mut rng()) - 16.3).abs() < 1e-12);
        assert!((power_model(16, &m, &mut rng()) - 21.8).abs() < 1e-12);
    }

    #[test]
    fn brute_force_fulfilling_set() {
        // enumerate all 17 thread counts independently of fulfilling_threads
        let m = WorkloadModel::default();
        let mut set = Vec::new();
        for t in 0u32..=16 {
            let f = if t == 0 { 0.0 } else { 40.0 * (1.0 - (-(t as f64) / 6.0).exp()) };
            if (24.0..=30.0).contains(&f) {
                set.push(t);
            }
        }
        assert_eq!(set, vec![6, 7, 8]);
        assert_eq!(m.fulfilling_threads(24.0, 30.0), set);
    }

    #[test]
    fn monotone_in_threads() {
        let m = WorkloadModel::default();
        for t in 0..16 {
            assert!(m.fps_noiseless(t + 1, 0.0) > m.fps_noiseless(t, 0.0));
            assert!(m.power_noiseless(t + 1) > m.power_noiseless(t));
        }
    }

    #[test]
    fn buffer_dips() {
        let m = WorkloadModel {
            buffer_schedule: vec![BufferDip {
                start_s: 10.0,
                duration_s: 5.0,
                depth: 0.5,
            }],
            ..Default::default()
        };
        let full = m.fps_noiseless(6, 0.0);
        assert_eq!(m.fps_noiseless(6, 12.0), full * 0.5);
        assert_eq!(m.fps_noiseless(6, 15.0), full);
    }

    #[test]
    fn noise_is_seeded() {
        let m = WorkloadModel {
            noise_fps: 0.5,
            noise_power: 0.2,
            ..Default::default()
        };
        let a: Vec<f64> = {
            let mut r = rng();
            (0..20).map(|_| fps_model(6, 0.0, &m, &mut r)).collect()
        };
        let b: Vec<f64> = {
            let mut r = rng();
            (0..20).map(|_| fps_model(6, 0.0, &m, &mut r)).collect()
        };
        assert_eq!(a, b);
        assert!(power_model(0, &m, &mut rng()) >= 6.5);
    }

    #[test]
    fn validation() {
        assert!(WorkloadModel::default().validate().is_ok());
        let bad = WorkloadModel {
            kappa: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
