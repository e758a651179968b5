//! Learning-rate scaling and the warmup + cosine schedule.

use std::f64::consts::PI;

/// Square-root scaling: `base_lr * sqrt(per_device_batch * device_count)`.
pub fn scaled_lr(base_lr: f64, per_device_batch: usize, device_count: usize) -> f64 {
    base_lr * ((per_device_batch * device_count) as f64).sqrt()
}

/// Number of warmup steps, rounded up and at least one.
pub fn warmup_steps(total_steps: usize, warmup_frac: f64) -> usize {
    ((warmup_frac * total_steps as f64).ceil() as usize).max(1)
}

/// Linear warmup to `lr_max` over `W` steps, then cosine decay to zero at
/// `total_steps`.
pub fn schedule_lr(step: usize, total_steps: usize, warmup_frac: f64, lr_max: f64) -> f64 {
    let w = warmup_steps(total_steps, warmup_frac);
    if step < w {
        return lr_max * step as f64 / w as f64;
    }
    if step >= total_steps {
        return 0.0;
    }
    let progress = ((step - w) as f64 / (total_steps - w) as f64).min(1.0);
    let lr = lr_max * 0.5 * (1.0 + (PI * progress).cos());
    lr.max(0.0)
}
