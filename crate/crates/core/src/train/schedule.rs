/// Linear warmup to `base_lr`, then cosine decay reaching `min_lr` on the
/// final step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, min_lr: f64, warmup_epochs: usize, total_epochs: usize, steps_per_epoch: usize) -> Self {
        Self {
            base_lr,
            min_lr,
            warmup_steps: warmup_epochs * steps_per_epoch,
            total_steps: total_epochs * steps_per_epoch,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        let w = self.warmup_steps;
        if step < w {
            return self.base_lr * (step + 1) as f64 / w as f64;
        }
        let span = self.total_steps.saturating_sub(1).saturating_sub(w);
        if span == 0 {
            return if step + 1 >= self.total_steps { self.min_lr } else { self.base_lr };
        }
        let progress = ((step - w) as f64 / span as f64).min(1.0);
        self.min_lr + (self.base_lr - self.min_lr) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
