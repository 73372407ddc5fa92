use std::f64::consts::PI;
use std::fmt;

use crate::error::{contract, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LrScheduleKind {
    CosineDecay,
    CosineWithRestarts,
}

impl LrScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::CosineDecay => "cosine",
            Self::CosineWithRestarts => "cosine_restarts",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cosine" => Some(Self::CosineDecay),
            "cosine_restarts" => Some(Self::CosineWithRestarts),
            _ => None,
        }
    }
}

impl fmt::Display for LrScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LrScheduleSpec {
    pub kind: LrScheduleKind,
    pub base_lr: f64,
    pub num_cycles: u32,
    pub warmup_steps: u64,
}

impl LrScheduleSpec {
    pub fn cosine(base_lr: f64) -> Self {
        Self {
            kind: LrScheduleKind::CosineDecay,
            base_lr,
            num_cycles: 1,
            warmup_steps: 0,
        }
    }

    pub fn restarts(base_lr: f64, num_cycles: u32) -> Self {
        Self {
            kind: LrScheduleKind::CosineWithRestarts,
            base_lr,
            num_cycles,
            warmup_steps: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!(
                "base_lr {} must be positive",
                self.base_lr
            )));
        }
        if self.kind == LrScheduleKind::CosineWithRestarts && self.num_cycles == 0 {
            return Err(Error::Config("num_cycles must be at least 1".into()));
        }
        Ok(())
    }

    /// Learning rate before optimizer step `step` of `total_steps`.
    ///
    /// Warmup rises linearly from 0. Afterwards, with progress
    /// `p = (step − warmup) / (total − warmup)`, cosine decay gives
    /// `base·½(1 + cos πp)` and restarts give `base·½(1 + cos(π·frac(p·n)))`,
    /// reaching 0 at `p = 1`.
    pub fn lr_at(&self, step: u64, total_steps: u64) -> Result<f64> {
        if total_steps == 0 {
            return Err(contract("learning-rate schedule needs total_steps > 0"));
        }
        if step > total_steps {
            return Err(contract(format!(
                "step {step} beyond total_steps {total_steps}"
            )));
        }
        let base = self.base_lr;
        if step < self.warmup_steps {
            return Ok(base * step as f64 / self.warmup_steps as f64);
        }
        if total_steps <= self.warmup_steps {
            return Ok(base);
        }
        let p = (step - self.warmup_steps) as f64 / (total_steps - self.warmup_steps) as f64;
        let phase = match self.kind {
            LrScheduleKind::CosineDecay => p,
            LrScheduleKind::CosineWithRestarts if p >= 1.0 => 1.0,
            LrScheduleKind::CosineWithRestarts => (p * self.num_cycles as f64).fract(),
        };
        Ok(base * 0.5 * (1.0 + (PI * phase).cos()))
    }
}

pub fn lr_at(spec: &LrScheduleSpec, step: u64, total_steps: u64) -> Result<f64> {
    spec.lr_at(step, total_steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_decay_closed_forms() {
        let s = LrScheduleSpec::cosine(7e-4);
        assert_eq!(s.lr_at(0, 100).unwrap(), 7e-4);
        assert!((s.lr_at(50, 100).unwrap() - 3.5e-4).abs() < 1e-12);
        assert!(s.lr_at(100, 100).unwrap().abs() < 1e-12);
    }

    #[test]
    fn restarts_hit_base_at_cycle_starts_and_half_at_midpoints() {
        let s = LrScheduleSpec::restarts(5e-4, 4);
        let total = 800;
        for c in 0..4 {
            assert!((s.lr_at(c * 200, total).unwrap() - 5e-4).abs() < 1e-9);
            assert!((s.lr_at(c * 200 + 100, total).unwrap() - 2.5e-4).abs() < 1e-9);
        }
        let lrs: Vec<f64> = (0..total).map(|t| s.lr_at(t, total).unwrap()).collect();
        let maxima = (0..lrs.len())
            .filter(|&i| {
                (i == 0 || lrs[i] > lrs[i - 1]) && (i + 1 == lrs.len() || lrs[i] >= lrs[i + 1])
            })
            .count();
        assert_eq!(maxima, 4);
    }

    #[test]
    fn warmup_is_linear() {
        let s = LrScheduleSpec {
            warmup_steps: 10,
            ..LrScheduleSpec::cosine(1.0)
        };
        assert_eq!(s.lr_at(0, 110).unwrap(), 0.0);
        assert!((s.lr_at(5, 110).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(s.lr_at(10, 110).unwrap(), 1.0);
    }

    #[test]
    fn contract_errors() {
        let s = LrScheduleSpec::cosine(1.0);
        assert!(s.lr_at(0, 0).is_err());
        assert!(s.lr_at(11, 10).is_err());
        assert!(LrScheduleSpec::restarts(1.0, 0).validate().is_err());
        assert!(LrScheduleSpec::cosine(-1.0).validate().is_err());
    }

    proptest! {
        #[test]
        fn bounded_and_peaks_at_base(total in 1u64..2000, cycles in 1u32..9, restarts in any::<bool>()) {
            let s = if restarts { LrScheduleSpec::restarts(0.3, cycles) } else { LrScheduleSpec::cosine(0.3) };
            let mut max: f64 = 0.0;
            for t in 0..=total {
                let lr = s.lr_at(t, total).unwrap();
                prop_assert!((0.0..=0.3 + 1e-15).contains(&lr));
                max = max.max(lr);
            }
            prop_assert_eq!(max, 0.3);
        }

        #[test]
        fn continuous_within_a_cycle(total in 200u64..2000, cycles in 1u32..5) {
            let s = LrScheduleSpec::restarts(1.0, cycles);
            let step_bound = PI * cycles as f64 / total as f64;
            for t in 1..total {
                let (a, b) = (s.lr_at(t - 1, total).unwrap(), s.lr_at(t, total).unwrap());
                prop_assert!(b <= a + 1e-12 || b > 1.0 - step_bound, "jump up only at restarts");
            }
        }
    }
}
