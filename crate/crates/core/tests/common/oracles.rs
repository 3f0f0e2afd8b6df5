//! Independent brute-force implementations used as test oracles.

use evhar::event_codec::{AccumulationMode, Event, EventStream};
use rand::Rng;

/// Index selected for output slot `k` when picking `t` of `n` frames: the
/// unique `i` with `i * t <= k * n < (i + 1) * t`, found by linear search.
pub fn downsample_index(n: usize, t: usize, k: usize) -> usize {
    (0..n).find(|&i| i * t <= k * n && k * n < (i + 1) * t).expect("some window contains k")
}

/// Event frames by direct definition, for integer frame rates: window
/// membership is decided with exact integer arithmetic.
pub fn accumulate(stream: &EventStream, rate: u64, mode: AccumulationMode) -> Vec<Vec<f32>> {
    let (w, h) = (stream.width as usize, stream.height as usize);
    let Some(first) = stream.events.first().map(|e| e.t) else {
        return vec![vec![0.0; w * h]];
    };
    let last = stream.events.iter().map(|e| e.t).max().unwrap();
    let span = (last - first) * rate;
    let frames = (span.div_ceil(1_000_000) as usize).max(1);
    let mut out = Vec::with_capacity(frames);
    for k in 0..frames {
        let mut cells = vec![0i64; w * h];
        for e in &stream.events {
            let slot = (((e.t - first) * rate / 1_000_000) as usize).min(frames - 1);
            if slot == k {
                cells[e.y as usize * w + e.x as usize] += match mode {
                    AccumulationMode::Count => 1,
                    AccumulationMode::PolaritySum => e.polarity as i64,
                };
            }
        }
        let max = cells.iter().map(|v| v.abs()).max().unwrap_or(0);
        out.push(
            cells
                .iter()
                .map(|&v| if max == 0 { 0.0 } else { v.abs() as f32 / max as f32 })
                .collect(),
        );
    }
    out
}

/// Sorted random stream on a small sensor.
pub fn random_stream(r: &mut impl Rng, max_events: usize, max_span_us: u64) -> EventStream {
    let (w, h) = (r.gen_range(1..7u16), r.gen_range(1..7u16));
    let n = r.gen_range(0..=max_events);
    let mut ts: Vec<u64> = (0..n).map(|_| r.gen_range(0..=max_span_us)).collect();
    ts.sort_unstable();
    let base = r.gen_range(0..5_000_000u64);
    let events = ts
        .into_iter()
        .map(|t| Event {
            t: base + t,
            x: r.gen_range(0..w),
            y: r.gen_range(0..h),
            polarity: if r.gen_bool(0.5) { 1 } else { -1 },
        })
        .collect();
    EventStream::new(w, h, events).unwrap()
}

/// `(accuracy, weighted F1)` from per-class counts found by filtering,
/// without building a confusion matrix.
pub fn metrics(preds: &[usize], labels: &[usize], k: usize) -> (f64, f64) {
    let n = labels.len() as f64;
    let acc = preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / n;
    let mut f1 = 0.0;
    for c in 0..k {
        let tp = preds.iter().zip(labels).filter(|&(&p, &l)| p == c && l == c).count() as f64;
        let fp = preds.iter().zip(labels).filter(|&(&p, &l)| p == c && l != c).count() as f64;
        let fnn = preds.iter().zip(labels).filter(|&(&p, &l)| p != c && l == c).count() as f64;
        let support = tp + fnn;
        if support == 0.0 {
            continue;
        }
        let f = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fnn) };
        f1 += support / n * f;
    }
    (acc, f1)
}

/// Mean cross-entropy from the definition, with a max shift for stability.
pub fn cross_entropy(logits: &[f64], k: usize, labels: &[usize]) -> f64 {
    let total: f64 = logits
        .chunks(k)
        .zip(labels)
        .map(|(row, &y)| {
            let m = row.iter().cloned().fold(f64::MIN, f64::max);
            let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .sum();
    total / labels.len() as f64
}
