//! Heralded remote entanglement between two network qubits.
//!
//! Attempts are grouped in blocks; after every full block without a herald
//! the ions are re-cooled. A campaign ends at the first successful attempt.

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{noisy_bell_state, BellNoise};
use crate::quantum::{QuantumState, QubitId};

/// Timing and success probability of entanglement attempts (µs).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttemptSchedule {
    pub attempt_duration: f64,
    pub attempts_per_block: u64,
    pub recool_duration: f64,
    pub success_prob: f64,
    /// Give up after this many attempts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_attempts: Option<u64>,
}

impl AttemptSchedule {
    /// 1 µs attempts in 200 µs blocks with 300 µs re-cooling, at the
    /// success probability that gives 182 heralds per second.
    pub fn benchmark_182() -> Self {
        AttemptSchedule {
            attempt_duration: 1.0,
            attempts_per_block: 200,
            recool_duration: 300.0,
            success_prob: 4.430_236_003_355_872_5e-4,
            max_attempts: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.attempt_duration > 0.0 && self.attempt_duration.is_finite()) {
            return Err(Error::Config("attempt_duration must be positive".into()));
        }
        if self.attempts_per_block == 0 {
            return Err(Error::Config("attempts_per_block must be at least 1".into()));
        }
        if !(self.recool_duration >= 0.0 && self.recool_duration.is_finite()) {
            return Err(Error::Config("recool_duration must be non-negative".into()));
        }
        if !(self.success_prob > 0.0 && self.success_prob <= 1.0) {
            return Err(Error::InvalidProbability {
                name: "success_prob",
                value: self.success_prob,
            });
        }
        if self.max_attempts == Some(0) {
            return Err(Error::Config("max_attempts must be at least 1".into()));
        }
        Ok(())
    }

    /// Model time consumed by a campaign that heralds on attempt `attempts`.
    pub fn elapsed_for(&self, attempts: u64) -> f64 {
        let recools = (attempts.saturating_sub(1)) / self.attempts_per_block;
        attempts as f64 * self.attempt_duration + recools as f64 * self.recool_duration
    }

    /// Expected campaign duration, `T/p + R·qᴺ/(1−qᴺ)`.
    pub fn mean_elapsed(&self) -> f64 {
        let p = self.success_prob;
        let q_n = (1.0 - p).powf(self.attempts_per_block as f64);
        let recool = if q_n > 0.0 {
            self.recool_duration * q_n / (1.0 - q_n)
        } else {
            0.0
        };
        self.attempt_duration / p + recool
    }

    /// Mean herald rate (1/µs).
    pub fn mean_rate(&self) -> f64 {
        1.0 / self.mean_elapsed()
    }

    /// Duty-cycle estimate `p / (T + R/N)`.
    pub fn duty_cycle_rate(&self) -> f64 {
        self.success_prob / (self.attempt_duration + self.recool_duration / self.attempts_per_block as f64)
    }

    /// Success probability giving mean rate `rate` with this timing.
    pub fn solve_success_prob(&self, rate: f64) -> Result<f64> {
        let mut s = *self;
        s.success_prob = 1.0;
        if rate <= 0.0 || rate > s.mean_rate() {
            return Err(Error::InvalidParameter(format!("rate {rate} not reachable")));
        }
        let (mut lo, mut hi) = (1e-15_f64, 1.0_f64);
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            s.success_prob = mid;
            if s.mean_rate() < rate {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Draw the attempt count of one campaign.
    pub fn sample_attempts<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if self.success_prob >= 1.0 {
            return 1;
        }
        let g = Geometric::new(self.success_prob).expect("validated probability");
        g.sample(rng).saturating_add(1)
    }
}

/// Result of a successful campaign.
#[derive(Clone, Debug)]
pub struct HeraldRecord {
    pub attempts: u64,
    pub elapsed: f64,
    /// Decoupling pulses each module applied while waiting.
    pub dd_pulses_applied: [u64; 2],
    pub state: QuantumState,
}

/// Run attempts until a herald; the pair is always delivered as Ψ⁺ with
/// the configured noise, independent of how long it took.
pub fn generate_entanglement<R: Rng + ?Sized>(
    schedule: &AttemptSchedule,
    bell: &BellNoise,
    pair: [QubitId; 2],
    rng: &mut R,
) -> Result<HeraldRecord> {
    schedule.validate()?;
    let attempts = schedule.sample_attempts(rng);
    if let Some(cap) = schedule.max_attempts {
        if attempts > cap {
            return Err(Error::CampaignFailed {
                attempts: cap,
                elapsed_us: schedule.elapsed_for(cap),
            });
        }
    }
    Ok(HeraldRecord {
        attempts,
        elapsed: schedule.elapsed_for(attempts),
        dd_pulses_applied: [0, 0],
        state: noisy_bell_state(bell, pair)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::ModuleId;
    use crate::rng;

    fn pair() -> [QubitId; 2] {
        [QubitId::network(ModuleId::ALICE), QubitId::network(ModuleId::BOB)]
    }

    #[test]
    fn certain_success_takes_one_attempt() {
        let s = AttemptSchedule {
            attempt_duration: 2.5,
            attempts_per_block: 10,
            recool_duration: 100.0,
            success_prob: 1.0,
            max_attempts: None,
        };
        let mut r = rng::stream(1, rng::streams::LINK);
        let rec = generate_entanglement(&s, &BellNoise::IDEAL, pair(), &mut r).unwrap();
        assert_eq!((rec.attempts, rec.elapsed), (1, 2.5));
        assert_eq!(s.mean_rate(), 1.0 / 2.5);
    }

    #[test]
    fn elapsed_counts_completed_blocks() {
        let s = AttemptSchedule {
            attempt_duration: 1.0,
            attempts_per_block: 200,
            recool_duration: 300.0,
            success_prob: 0.1,
            max_attempts: None,
        };
        assert_eq!(s.elapsed_for(200), 200.0);
        assert_eq!(s.elapsed_for(201), 501.0);
        assert_eq!(s.elapsed_for(400), 700.0);
    }

    #[test]
    fn half_probability_without_recool() {
        let s = AttemptSchedule {
            attempt_duration: 1.0,
            attempts_per_block: 5,
            recool_duration: 0.0,
            success_prob: 0.5,
            max_attempts: None,
        };
        assert!((s.mean_rate() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn benchmark_schedule_rate() {
        let s = AttemptSchedule::benchmark_182();
        assert!((s.mean_rate() * 1e6 - 182.0).abs() < 1e-6);
        let p = s.solve_success_prob(182e-6).unwrap();
        assert!((p - s.success_prob).abs() < 1e-12);
    }

    #[test]
    fn attempt_cap_fails_cleanly() {
        let s = AttemptSchedule {
            attempt_duration: 1.0,
            attempts_per_block: 10,
            recool_duration: 5.0,
            success_prob: 1e-9,
            max_attempts: Some(25),
        };
        let mut r = rng::stream(3, rng::streams::LINK);
        match generate_entanglement(&s, &BellNoise::IDEAL, pair(), &mut r) {
            Err(Error::CampaignFailed { attempts, elapsed_us }) => {
                assert_eq!(attempts, 25);
                assert_eq!(elapsed_us, 35.0);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }
}
