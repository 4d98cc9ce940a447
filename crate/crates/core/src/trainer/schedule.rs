//! Learning-rate schedules.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// Linear warmup from 0, then half-cosine decay to 0.
    #[default]
    Cosine,
    /// Linear warmup from 0, then constant.
    Constant,
}

/// Number of warmup steps for a run of `total` steps.
pub fn warmup_steps(total: usize, warmup_ratio: f64) -> usize {
    libm::floor(warmup_ratio * total as f64) as usize
}

/// Learning rate at optimizer step `step` (0-based) of `total`.
pub fn lr_at(schedule: Schedule, base: f64, step: usize, total: usize, warmup_ratio: f64) -> f64 {
    let warm = warmup_steps(total, warmup_ratio);
    if step < warm {
        return base * step as f64 / warm as f64;
    }
    match schedule {
        Schedule::Constant => base,
        Schedule::Cosine => {
            let span = total.saturating_sub(warm).max(1) as f64;
            let progress = ((step - warm) as f64 / span).min(1.0);
            0.5 * base * (1.0 + libm::cos(core::f64::consts::PI * progress))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_shape() {
        let (base, total) = (1e-3, 100);
        assert_eq!(lr_at(Schedule::Cosine, base, 0, total, 0.1), 0.0);
        assert!((lr_at(Schedule::Cosine, base, 5, total, 0.1) - 0.5e-3).abs() < 1e-18);
        assert_eq!(lr_at(Schedule::Cosine, base, 10, total, 0.1), base);
        let peak = (0..total)
            .map(|s| lr_at(Schedule::Cosine, base, s, total, 0.1))
            .fold(0.0, f64::max);
        assert_eq!(peak, base);
        let last = lr_at(Schedule::Cosine, base, total - 1, total, 0.1);
        assert!(last > 0.0 && last < 1e-3 * base);
    }

    #[test]
    fn no_warmup() {
        assert_eq!(lr_at(Schedule::Cosine, 2.0, 0, 10, 0.0), 2.0);
        assert_eq!(lr_at(Schedule::Constant, 2.0, 7, 10, 0.0), 2.0);
    }
}
