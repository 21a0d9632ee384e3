//! Learning-rate schedules: linear warmup with linear decay (pretraining)
//! and the warmup/hold/exponential-decay tri-stage shape (fine-tuning).

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    LinearWarmupLinearDecay,
    Tristage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub peak: f64,
    pub warmup_steps: u64,
    pub hold_steps: u64,
    pub decay_steps: u64,
    /// Fraction of the peak reached at the end of the decay phase
    /// (tri-stage only).
    pub final_fraction: f64,
}

impl LrSchedule {
    /// Linear warmup to the peak, then linear decay to zero.
    pub fn linear(peak: f64, warmup_steps: u64, decay_steps: u64) -> Self {
        LrSchedule {
            kind: ScheduleKind::LinearWarmupLinearDecay,
            peak,
            warmup_steps,
            hold_steps: 0,
            decay_steps,
            final_fraction: 0.0,
        }
    }

    /// Warmup, hold, then exponential decay to `final_fraction` of the peak.
    pub fn tristage(
        peak: f64,
        warmup_steps: u64,
        hold_steps: u64,
        decay_steps: u64,
        final_fraction: f64,
    ) -> Self {
        LrSchedule {
            kind: ScheduleKind::Tristage,
            peak,
            warmup_steps,
            hold_steps,
            decay_steps,
            final_fraction,
        }
    }

    /// Reference pretraining schedule: 0 → 5e-4 over the first 32k steps,
    /// then linear decay to zero over the remaining 368k.
    pub fn pretrain_reference() -> Self {
        Self::linear(5e-4, 32_000, 368_000)
    }

    /// Reference fine-tuning schedule: ramp to 3e-5 in 8k steps, hold 32k,
    /// decay exponentially to 5% of the peak over the last 40k.
    pub fn finetune_reference() -> Self {
        Self::tristage(3e-5, 8_000, 32_000, 40_000, 0.05)
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if step <= self.warmup_steps {
            if self.warmup_steps == 0 {
                return self.peak;
            }
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        match self.kind {
            ScheduleKind::LinearWarmupLinearDecay => {
                let into = (step - self.warmup_steps) as f64;
                if self.decay_steps == 0 || into >= self.decay_steps as f64 {
                    0.0
                } else {
                    self.peak * (1.0 - into / self.decay_steps as f64)
                }
            }
            ScheduleKind::Tristage => {
                let hold_end = self.warmup_steps + self.hold_steps;
                if step <= hold_end {
                    return self.peak;
                }
                let into = (step - hold_end) as f64;
                if self.decay_steps == 0 || into >= self.decay_steps as f64 {
                    return self.peak * self.final_fraction;
                }
                self.peak * (self.final_fraction.ln() * into / self.decay_steps as f64).exp()
            }
        }
    }
}
