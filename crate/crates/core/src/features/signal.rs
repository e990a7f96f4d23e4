use thiserror::Error;

/// Frame length used for the silence ratio and the centroid proxy.
pub const FRAME_SECONDS: f64 = 0.02;
/// Frames whose RMS falls below this count as silent.
pub const SILENCE_RMS: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("empty sample sequence")]
    Empty,
    #[error("sample rate must be positive")]
    BadRate,
}

fn crossings(samples: &[f64]) -> usize {
    samples
        .windows(2)
        .filter(|w| (w[0] >= 0.0) != (w[1] >= 0.0))
        .count()
}

/// Signal properties of a mono clip, in this order:
/// duration (s), RMS energy, zero crossings per second, peak absolute
/// amplitude, fraction of 20 ms frames with RMS below 0.01, and a centroid
/// proxy in Hz.
///
/// The centroid proxy is the energy-weighted mean of per-frame zero-crossing
/// rates, halved, so a pure tone of frequency f maps to roughly f. A trailing
/// partial frame counts as a frame.
pub fn signal_properties(pcm: &[f64], sample_rate: u32) -> Result<[f64; 6], SignalError> {
    if pcm.is_empty() {
        return Err(SignalError::Empty);
    }
    if sample_rate == 0 {
        return Err(SignalError::BadRate);
    }
    let rate = f64::from(sample_rate);
    let duration = pcm.len() as f64 / rate;
    let sum_sq: f64 = pcm.iter().map(|x| x * x).sum();
    let rms = (sum_sq / pcm.len() as f64).sqrt();
    let zcr = crossings(pcm) as f64 / duration;
    let peak = pcm.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    let frame_len = ((FRAME_SECONDS * rate).round() as usize).max(1);
    let (mut frames, mut silent) = (0usize, 0usize);
    let (mut weighted, mut energy) = (0.0, 0.0);
    for frame in pcm.chunks(frame_len) {
        frames += 1;
        let e: f64 = frame.iter().map(|x| x * x).sum();
        if (e / frame.len() as f64).sqrt() < SILENCE_RMS {
            silent += 1;
        }
        let frame_zcr = crossings(frame) as f64 * rate / frame.len() as f64;
        weighted += e * frame_zcr;
        energy += e;
    }
    let centroid = if energy > 0.0 { weighted / energy / 2.0 } else { 0.0 };
    Ok([
        duration,
        rms,
        zcr,
        peak,
        silent as f64 / frames as f64,
        centroid,
    ])
}
