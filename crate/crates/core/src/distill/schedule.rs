//! Warmup-stable-decay learning rate.

/// `ceil(frac · total)` with a guard against representation noise, so
/// `0.05 · 100` yields 5 rather than 6.
pub fn ceil_fraction(frac: f64, total: u64) -> u64 {
    let x = frac * total as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as u64
    } else {
        x.ceil() as u64
    }
}

/// Linear warmup to `peak` over the first `⌈warmup_frac·total⌉` steps,
/// constant, then linear decay to zero over the last `⌈decay_frac·total⌉`.
/// Where the phases overlap the smaller rate wins.
pub fn wsd_lr(step: u64, total: u64, peak: f32, warmup_frac: f64, decay_frac: f64) -> f32 {
    if step >= total {
        return 0.0;
    }
    let peak = f64::from(peak);
    let warmup = ceil_fraction(warmup_frac, total);
    let decay = ceil_fraction(decay_frac, total);
    let mut lr = peak;
    if step < warmup {
        lr = lr.min(peak * (step + 1) as f64 / warmup as f64);
    }
    if decay > 0 && step >= total - decay.min(total) {
        lr = lr.min(peak * (total - step) as f64 / decay as f64);
    }
    lr as f32
}
