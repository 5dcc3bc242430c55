use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// `base * cos(7 pi t / (16 T))`
    #[default]
    Cosine,
    Constant,
}

/// Learning rate at `iteration` of `total`.
pub fn lr_schedule(iteration: u64, total: u64, base: f64, kind: Schedule) -> f64 {
    match kind {
        Schedule::Constant => base,
        Schedule::Cosine => {
            if total == 0 {
                return base;
            }
            let t = iteration.min(total) as f64 / total as f64;
            base * (7.0 * std::f64::consts::PI * t / 16.0).cos()
        }
    }
}
