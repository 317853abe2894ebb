//! Learning-rate schedule: linear warmup to the peak rate, then linear decay
//! to zero at the final step.

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("total steps ({total}) must exceed warmup steps ({warmup})")]
    TotalNotAfterWarmup { warmup: usize, total: usize },
    #[error("step {step} is beyond total steps {total}")]
    StepOutOfRange { step: usize, total: usize },
}

/// Learning rate at `step` for peak rate `eta`.
///
/// `eta * step / warmup` through the warmup, then a straight line from `eta`
/// at `warmup` down to `0` at `total`.
pub fn lr_at(step: usize, eta: f64, warmup: usize, total: usize) -> Result<f64, ScheduleError> {
    if total <= warmup {
        return Err(ScheduleError::TotalNotAfterWarmup { warmup, total });
    }
    if step > total {
        return Err(ScheduleError::StepOutOfRange { step, total });
    }
    if step <= warmup && warmup > 0 {
        Ok(eta * step as f64 / warmup as f64)
    } else {
        Ok(eta * (total - step) as f64 / (total - warmup) as f64)
    }
}
