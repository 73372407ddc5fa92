use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Training objective of one phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Objective {
    Clm,
    Mlm,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Self::Clm => "CLM",
            Self::Mlm => "MLM",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Phase {
    pub objective: Objective,
    pub epochs: usize,
}

/// Where an epoch falls in a schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpochSlot {
    pub objective: Objective,
    pub phase_index: usize,
    pub epoch_in_phase: usize,
}

/// An ordered, nonempty sequence of phases, written `4_CLM+16_MLM+4_CLM`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TrainingSchedule {
    phases: Vec<Phase>,
}

impl TrainingSchedule {
    pub fn new(phases: Vec<Phase>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::Config("a schedule needs at least one phase".into()));
        }
        if phases.iter().any(|p| p.epochs == 0) {
            return Err(Error::Config("every phase needs at least one epoch".into()));
        }
        Ok(Self { phases })
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }

    /// Epochs of `objective` summed over all phases.
    pub fn epochs_of(&self, objective: Objective) -> usize {
        self.phases
            .iter()
            .filter(|p| p.objective == objective)
            .map(|p| p.epochs)
            .sum()
    }

    pub fn objective_for_epoch(&self, epoch: usize) -> Result<EpochSlot> {
        let mut start = 0;
        for (phase_index, p) in self.phases.iter().enumerate() {
            if epoch < start + p.epochs {
                return Ok(EpochSlot {
                    objective: p.objective,
                    phase_index,
                    epoch_in_phase: epoch - start,
                });
            }
            start += p.epochs;
        }
        Err(Error::EpochRange {
            epoch,
            total: self.total_epochs(),
        })
    }

    /// True when `epoch` is the last epoch of its phase.
    pub fn ends_phase(&self, epoch: usize) -> bool {
        self.objective_for_epoch(epoch)
            .is_ok_and(|s| s.epoch_in_phase + 1 == self.phases[s.phase_index].epochs)
    }
}

impl fmt::Display for TrainingSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.phases.iter().enumerate() {
            if i > 0 {
                f.write_str("+")?;
            }
            write!(f, "{}_{}", p.epochs, p.objective)?;
        }
        Ok(())
    }
}

impl FromStr for TrainingSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_schedule(s)
    }
}

pub fn format_schedule(schedule: &TrainingSchedule) -> String {
    schedule.to_string()
}

/// Parses `phase ("+" phase)*` with `phase := INT "_" ("CLM" | "MLM")`.
/// Whitespace is allowed around phases. Errors carry the byte position.
pub fn parse_schedule(text: &str) -> Result<TrainingSchedule> {
    let bytes = text.as_bytes();
    let err = |position: usize, message: String| Error::Parse { position, message };
    let skip_ws = |mut i: usize| {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        i
    };
    let mut phases = Vec::new();
    let mut i = skip_ws(0);
    if i == bytes.len() {
        return Err(err(i, "empty schedule".into()));
    }
    loop {
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == start {
            return Err(err(start, "expected an epoch count".into()));
        }
        let epochs: usize = text[start..i].parse().map_err(|_| {
            err(
                start,
                format!("malformed epoch count `{}`", &text[start..i]),
            )
        })?;
        if epochs == 0 {
            return Err(err(start, "epoch count must be positive".into()));
        }
        if bytes.get(i) != Some(&b'_') {
            return Err(err(i, "expected `_` after the epoch count".into()));
        }
        i += 1;
        let name_start = i;
        while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
            i += 1;
        }
        let objective = match &text[name_start..i] {
            "CLM" => Objective::Clm,
            "MLM" => Objective::Mlm,
            other => return Err(err(name_start, format!("unknown objective `{other}`"))),
        };
        phases.push(Phase { objective, epochs });
        i = skip_ws(i);
        match bytes.get(i) {
            None => break,
            Some(b'+') => i = skip_ws(i + 1),
            Some(_) => return Err(err(i, "expected `+` between phases".into())),
        }
    }
    TrainingSchedule::new(phases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn phases(s: &TrainingSchedule) -> Vec<(Objective, usize)> {
        s.phases().iter().map(|p| (p.objective, p.epochs)).collect()
    }

    #[test]
    fn published_schedules() {
        use Objective::*;
        let s = parse_schedule("4_CLM+16_MLM+4_CLM").unwrap();
        assert_eq!(phases(&s), vec![(Clm, 4), (Mlm, 16), (Clm, 4)]);
        assert_eq!(s.total_epochs(), 24);
        assert_eq!(phases(&parse_schedule("24_CLM").unwrap()), vec![(Clm, 24)]);
        let s = parse_schedule("3_CLM+8_MLM+2_CLM+8_MLM+3_CLM").unwrap();
        assert_eq!(s.phases().len(), 5);
        assert_eq!(s.total_epochs(), 24);
    }

    #[test]
    fn whitespace_tolerated() {
        let s = parse_schedule("  4_CLM + 16_MLM ").unwrap();
        assert_eq!(s.to_string(), "4_CLM+16_MLM");
    }

    #[test]
    fn parse_errors_carry_positions() {
        let pos = |t: &str| match parse_schedule(t) {
            Err(Error::Parse { position, .. }) => position,
            other => panic!("{t}: {other:?}"),
        };
        assert_eq!(pos("4_XLM"), 2);
        assert_eq!(pos(""), 0);
        assert_eq!(pos("   "), 3);
        assert_eq!(pos("0_CLM"), 0);
        assert_eq!(pos("4_clm"), 2);
        assert_eq!(pos("4CLM"), 1);
        assert_eq!(pos("4_CLM+"), 6);
        assert_eq!(pos("4_CLM 2_MLM"), 6);
        assert_eq!(pos("99999999999999999999999_CLM"), 0);
    }

    #[test]
    fn format_examples() {
        let s = TrainingSchedule::new(vec![
            Phase {
                objective: Objective::Clm,
                epochs: 4,
            },
            Phase {
                objective: Objective::Mlm,
                epochs: 16,
            },
            Phase {
                objective: Objective::Clm,
                epochs: 4,
            },
        ])
        .unwrap();
        assert_eq!(format_schedule(&s), "4_CLM+16_MLM+4_CLM");
        assert_eq!(parse_schedule("7_MLM").unwrap().to_string(), "7_MLM");
    }

    #[test]
    fn epoch_lookup_boundaries() {
        let s = parse_schedule("4_CLM+16_MLM+4_CLM").unwrap();
        let slot = |e| s.objective_for_epoch(e).unwrap();
        assert_eq!(
            (
                slot(0).objective,
                slot(0).phase_index,
                slot(0).epoch_in_phase
            ),
            (Objective::Clm, 0, 0)
        );
        assert_eq!(
            (
                slot(4).objective,
                slot(4).phase_index,
                slot(4).epoch_in_phase
            ),
            (Objective::Mlm, 1, 0)
        );
        assert_eq!(
            (
                slot(20).objective,
                slot(20).phase_index,
                slot(20).epoch_in_phase
            ),
            (Objective::Clm, 2, 0)
        );
        assert_eq!(
            s.objective_for_epoch(24),
            Err(Error::EpochRange {
                epoch: 24,
                total: 24
            })
        );
        assert!(s.ends_phase(3) && !s.ends_phase(4) && s.ends_phase(19) && s.ends_phase(23));
    }

    fn arb_schedule() -> impl Strategy<Value = TrainingSchedule> {
        proptest::collection::vec((any::<bool>(), 1usize..500), 1..8).prop_map(|ps| {
            TrainingSchedule::new(
                ps.into_iter()
                    .map(|(clm, epochs)| Phase {
                        objective: if clm { Objective::Clm } else { Objective::Mlm },
                        epochs,
                    })
                    .collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn format_parse_round_trip(s in arb_schedule()) {
            prop_assert_eq!(parse_schedule(&format_schedule(&s)).unwrap(), s);
        }

        #[test]
        fn epoch_lookup_covers_schedule(s in arb_schedule()) {
            let total = s.total_epochs();
            let mut phase = 0;
            let mut within = 0;
            for e in 0..total {
                let slot = s.objective_for_epoch(e).unwrap();
                if slot.phase_index != phase {
                    prop_assert_eq!(slot.phase_index, phase + 1);
                    prop_assert_eq!(within, s.phases()[phase].epochs);
                    phase = slot.phase_index;
                    within = 0;
                }
                prop_assert_eq!(slot.epoch_in_phase, within);
                prop_assert_eq!(slot.objective, s.phases()[phase].objective);
                within += 1;
            }
            prop_assert!(s.objective_for_epoch(total).is_err());
        }
    }
}
