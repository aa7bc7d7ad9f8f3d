//! Per-step budget schedules: staged curricula, a fixed budget, and a
//! seeded random draw.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::RlError;
use crate::tokens::TokenCount;

/// Inclusive step range sharing one `b_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub from_step: u32,
    pub to_step: u32,
    pub b_max: TokenCount,
}

impl Stage {
    pub fn new(from_step: u32, to_step: u32, b_max: u64) -> Self {
        Stage { from_step, to_step, b_max: TokenCount(b_max) }
    }

    pub fn contains(&self, step: u32) -> bool {
        (self.from_step..=self.to_step).contains(&step)
    }
}

/// Contiguous stages with non-increasing budgets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Stage>", into = "Vec<Stage>")]
pub struct CurriculumSchedule {
    stages: Vec<Stage>,
}

impl CurriculumSchedule {
    pub fn new(stages: Vec<Stage>) -> Result<Self, RlError> {
        let Some(first) = stages.first() else {
            return Err(RlError::InvalidSchedule("no stages".into()));
        };
        if first.from_step == 0 {
            return Err(RlError::InvalidSchedule("steps are 1-based".into()));
        }
        for (i, s) in stages.iter().enumerate() {
            if s.from_step > s.to_step {
                return Err(RlError::InvalidSchedule(format!("stage {} is empty", i + 1)));
            }
            if s.b_max == TokenCount::ZERO {
                return Err(RlError::InvalidSchedule(format!("stage {} has zero budget", i + 1)));
            }
            if let Some(prev) = i.checked_sub(1).map(|j| stages[j]) {
                if s.from_step != prev.to_step + 1 {
                    return Err(RlError::InvalidSchedule(format!(
                        "stage {} starts at {} but the previous stage ends at {}",
                        i + 1,
                        s.from_step,
                        prev.to_step
                    )));
                }
                if s.b_max > prev.b_max {
                    return Err(RlError::InvalidSchedule(format!("stage {} raises the budget", i + 1)));
                }
            }
        }
        Ok(CurriculumSchedule { stages })
    }

    /// Five 60-step stages tightening from 8192 to 4096 tokens.
    pub fn five_stage() -> Self {
        let stages = [8192, 7168, 6144, 5120, 4096]
            .iter()
            .enumerate()
            .map(|(i, &b)| Stage::new(i as u32 * 60 + 1, (i as u32 + 1) * 60, b))
            .collect();
        CurriculumSchedule { stages }
    }

    /// One stage holding `b_max` for `steps` steps.
    pub fn constant(b_max: u64, steps: u32) -> Result<Self, RlError> {
        Self::new(alloc::vec![Stage::new(1, steps, b_max)])
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn first_step(&self) -> u32 {
        self.stages[0].from_step
    }

    pub fn last_step(&self) -> u32 {
        self.stages[self.stages.len() - 1].to_step
    }

    pub fn stage_index(&self, step: u32) -> Result<usize, RlError> {
        self.stages
            .iter()
            .position(|s| s.contains(step))
            .ok_or(RlError::StepOutOfRange { step, first: self.first_step(), last: self.last_step() })
    }
}

impl TryFrom<Vec<Stage>> for CurriculumSchedule {
    type Error = RlError;
    fn try_from(stages: Vec<Stage>) -> Result<Self, RlError> {
        Self::new(stages)
    }
}

impl From<CurriculumSchedule> for Vec<Stage> {
    fn from(s: CurriculumSchedule) -> Self {
        s.stages
    }
}

pub fn curriculum_budget(step: u32, schedule: &CurriculumSchedule) -> Result<TokenCount, RlError> {
    schedule.stage_index(step).map(|i| schedule.stages[i].b_max)
}

/// Budget source for a training run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BudgetSchedule {
    Staged { stages: CurriculumSchedule },
    Static { b_max: TokenCount, steps: u32 },
    /// Uniform draw from `choices` per step, reproducible from `(seed, step)`.
    Random { choices: Vec<TokenCount>, steps: u32, seed: u64 },
}

/// Number of reporting windows used for schedules without stages.
const REPORT_WINDOWS: u32 = 5;

impl BudgetSchedule {
    pub fn staged(stages: CurriculumSchedule) -> Self {
        BudgetSchedule::Staged { stages }
    }

    /// Parses `curriculum`, `static:B[:STEPS]` or `random:B1,B2,...[:STEPS]`.
    /// `default_steps` applies when no step count is given.
    pub fn parse(spec: &str, default_steps: u32, seed: u64) -> Result<Self, RlError> {
        let bad = |msg: &str| RlError::InvalidSchedule(format!("`{spec}`: {msg}"));
        let mut parts = spec.split(':');
        let kind = parts.next().unwrap_or_default();
        let body = parts.next();
        let steps = match parts.next() {
            Some(s) => s.trim().parse::<u32>().map_err(|_| bad("step count is not an integer"))?,
            None => default_steps,
        };
        if parts.next().is_some() {
            return Err(bad("too many fields"));
        }
        let parse_b = |s: &str| s.trim().parse::<u64>().map(TokenCount).map_err(|_| bad("budget is not an integer"));
        let out = match (kind, body) {
            ("curriculum", None) => BudgetSchedule::Staged { stages: CurriculumSchedule::five_stage() },
            ("static", Some(b)) => BudgetSchedule::Static { b_max: parse_b(b)?, steps },
            ("random", Some(list)) => BudgetSchedule::Random {
                choices: list.split(',').map(parse_b).collect::<Result<_, _>>()?,
                steps,
                seed,
            },
            _ => return Err(bad("expected curriculum, static:B or random:B1,B2")),
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), RlError> {
        match self {
            BudgetSchedule::Staged { .. } => Ok(()),
            BudgetSchedule::Static { b_max, steps } => {
                if *steps == 0 || *b_max == TokenCount::ZERO {
                    return Err(RlError::InvalidSchedule("static schedule needs steps > 0 and b_max > 0".into()));
                }
                Ok(())
            }
            BudgetSchedule::Random { choices, steps, .. } => {
                if *steps == 0 || choices.is_empty() || choices.contains(&TokenCount::ZERO) {
                    return Err(RlError::InvalidSchedule(
                        "random schedule needs steps > 0 and non-empty, non-zero choices".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn first_step(&self) -> u32 {
        match self {
            BudgetSchedule::Staged { stages } => stages.first_step(),
            _ => 1,
        }
    }

    pub fn last_step(&self) -> u32 {
        match self {
            BudgetSchedule::Staged { stages } => stages.last_step(),
            BudgetSchedule::Static { steps, .. } | BudgetSchedule::Random { steps, .. } => *steps,
        }
    }

    pub fn budget_at(&self, step: u32) -> Result<TokenCount, RlError> {
        let (first, last) = (self.first_step(), self.last_step());
        if step < first || step > last {
            return Err(RlError::StepOutOfRange { step, first, last });
        }
        Ok(match self {
            BudgetSchedule::Staged { stages } => curriculum_budget(step, stages)?,
            BudgetSchedule::Static { b_max, .. } => *b_max,
            BudgetSchedule::Random { choices, seed, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                *choices.choose(&mut rng).expect("validated non-empty")
            }
        })
    }

    /// Inclusive step windows used for stage-level reporting. Staged
    /// schedules report their own stages; the others are cut into five
    /// near-equal windows.
    pub fn report_windows(&self) -> Vec<(u32, u32)> {
        match self {
            BudgetSchedule::Staged { stages } => stages.stages().iter().map(|s| (s.from_step, s.to_step)).collect(),
            _ => {
                let total = self.last_step();
                let n = REPORT_WINDOWS.min(total);
                (0..n).map(|i| (i * total / n + 1, (i + 1) * total / n)).collect()
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            BudgetSchedule::Staged { stages } => {
                let parts: Vec<String> = stages
                    .stages()
                    .iter()
                    .map(|s| format!("{}-{}:{}", s.from_step, s.to_step, s.b_max))
                    .collect();
                format!("staged[{}]", parts.join(","))
            }
            BudgetSchedule::Static { b_max, steps } => format!("static:{b_max}:{steps}"),
            BudgetSchedule::Random { choices, steps, .. } => {
                let parts: Vec<String> = choices.iter().map(|c| format!("{c}")).collect();
                format!("random:{}:{steps}", parts.join(","))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn five_stage_boundaries() {
        let s = CurriculumSchedule::five_stage();
        let b = |step| curriculum_budget(step, &s).unwrap().0;
        assert_eq!(b(1), 8192);
        assert_eq!(b(60), 8192);
        assert_eq!(b(61), 7168);
        assert_eq!(b(180), 6144);
        assert_eq!(b(181), 5120);
        assert_eq!(b(241), 4096);
        assert_eq!(b(300), 4096);
        assert!(matches!(curriculum_budget(0, &s), Err(RlError::StepOutOfRange { .. })));
        assert!(matches!(curriculum_budget(301, &s), Err(RlError::StepOutOfRange { .. })));
    }

    #[test]
    fn validation() {
        assert!(CurriculumSchedule::new(vec![]).is_err());
        assert!(CurriculumSchedule::new(vec![Stage::new(1, 10, 100), Stage::new(12, 20, 50)]).is_err());
        assert!(CurriculumSchedule::new(vec![Stage::new(1, 10, 100), Stage::new(11, 20, 200)]).is_err());
        assert!(CurriculumSchedule::new(vec![Stage::new(5, 4, 100)]).is_err());
        assert!(CurriculumSchedule::new(vec![Stage::new(1, 10, 100), Stage::new(11, 20, 100)]).is_ok());
    }

    #[test]
    fn serde_round_trip_validates() {
        let s = CurriculumSchedule::five_stage();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<CurriculumSchedule>(&json).unwrap(), s);
        let bad = r#"[{"from_step":1,"to_step":10,"b_max":10},{"from_step":11,"to_step":20,"b_max":20}]"#;
        assert!(serde_json::from_str::<CurriculumSchedule>(bad).is_err());
    }

    #[test]
    fn parse_specs() {
        let s = BudgetSchedule::parse("static:8192", 300, 0).unwrap();
        assert_eq!(s.budget_at(150).unwrap().0, 8192);
        assert_eq!(s.last_step(), 300);
        let r = BudgetSchedule::parse("random:4096,8192:40", 300, 7).unwrap();
        assert_eq!(r.last_step(), 40);
        for step in 1..=40 {
            let b = r.budget_at(step).unwrap().0;
            assert!(b == 4096 || b == 8192);
            assert_eq!(r.budget_at(step).unwrap().0, b);
        }
        let draws: Vec<u64> = (1..=40).map(|s| r.budget_at(s).unwrap().0).collect();
        assert!(draws.contains(&4096) && draws.contains(&8192));
        assert!(BudgetSchedule::parse("curriculum", 1, 0).is_ok());
        assert!(BudgetSchedule::parse("static:x", 1, 0).is_err());
        assert!(BudgetSchedule::parse("random:", 1, 0).is_err());
        assert!(BudgetSchedule::parse("weird", 1, 0).is_err());
    }

    #[test]
    fn report_windows_cover_all_steps() {
        let s = BudgetSchedule::Static { b_max: TokenCount(10), steps: 23 };
        let w = s.report_windows();
        assert_eq!(w.len(), 5);
        assert_eq!(w[0].0, 1);
        assert_eq!(w[4].1, 23);
        for pair in w.windows(2) {
            assert_eq!(pair[1].0, pair[0].1 + 1);
        }
        assert_eq!(BudgetSchedule::staged(CurriculumSchedule::five_stage()).report_windows()[1], (61, 120));
    }
}
