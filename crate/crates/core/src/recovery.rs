//! Key recovery from raw probe traces: resample miss events onto a fixed
//! grid, detect per-multiplication peaks, read off inter-peak gaps as zero
//! runs, and merge several noisy partial keys by majority vote with
//! edit-script alignment.

use std::collections::HashMap;

use crate::attacker::RawTrace;
use crate::error::SimError;

/// A trace resampled onto a regular grid of energy windows.
#[derive(Debug, Clone)]
pub struct ResampledTrace {
    /// Grid spacing, cycles.
    pub interval: u64,
    /// Window width, cycles.
    pub window: u64,
    /// Sum of squared probe latencies per window, normalized by window width.
    pub values: Vec<f64>,
    /// Windows whose every raw sample was discarded as an outlier and were
    /// filled by interpolation.
    pub interpolated: usize,
}

/// Shrink the window for fast multipliers: a window wider than about a third
/// of one multiplication smears adjacent operations together. The interval
/// follows so each window still covers several grid points.
pub fn effective_resample_params(
    interval: u64,
    window: u64,
    predicted_mult_cycles: f64,
) -> (u64, u64) {
    let mut w = window;
    if predicted_mult_cycles < 3.0 * window as f64 {
        w = ((predicted_mult_cycles / 3.0).floor() as u64).max(1);
    }
    let i = interval.min((w / 5).max(1));
    (i, w)
}

/// Resample a raw trace. Probe latencies beyond `outlier_factor` times the
/// median are discarded (an interrupt landed inside the probe); windows left
/// with only discarded samples are linearly interpolated from their valid
/// neighbors.
pub fn resample(
    trace: &RawTrace,
    interval: u64,
    window: u64,
    outlier_factor: f64,
) -> Result<ResampledTrace, SimError> {
    let res = trace.meta.counter_resolution;
    let span = trace.meta.span_units as f64 * res;
    if span < window as f64 {
        return Err(SimError::TraceTooShort { span: span as u64, window });
    }
    let times: Vec<f64> = trace.timestamps.iter().map(|&t| t as f64 * res).collect();
    let lats: Vec<f64> = trace.latencies.iter().map(|&l| l as f64 * res).collect();
    let cutoff = {
        let mut sorted = lats.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.is_empty() {
            f64::INFINITY
        } else {
            outlier_factor * sorted[sorted.len() / 2]
        }
    };
    let n = (span / interval as f64) as usize + 1;
    let half = window as f64 / 2.0;
    let mut values = vec![0.0f64; n];
    let mut valid = vec![true; n];
    let mut lo = 0usize;
    let mut hi = 0usize;
    for (p, v) in values.iter_mut().enumerate() {
        let center = (p as u64 * interval) as f64;
        while lo < times.len() && times[lo] < center - half {
            lo += 1;
        }
        if hi < lo {
            hi = lo;
        }
        while hi < times.len() && times[hi] < center + half {
            hi += 1;
        }
        let mut raw = 0usize;
        let mut kept = 0usize;
        let mut energy = 0.0;
        for e in lo..hi {
            raw += 1;
            if lats[e] <= cutoff {
                kept += 1;
                energy += lats[e] * lats[e];
            }
        }
        if raw > 0 && kept == 0 {
            valid[p] = false;
        } else {
            *v = energy / window as f64;
        }
    }
    // Fill discarded windows from their valid neighbors.
    let mut interpolated = 0usize;
    let mut p = 0usize;
    while p < n {
        if valid[p] {
            p += 1;
            continue;
        }
        let start = p;
        let mut end = p;
        while end < n && !valid[end] {
            end += 1;
        }
        let left = if start > 0 { Some(values[start - 1]) } else { None };
        let right = if end < n { Some(values[end]) } else { None };
        for (off, q) in (start..end).enumerate() {
            values[q] = match (left, right) {
                (Some(l), Some(r)) => {
                    let f = (off + 1) as f64 / (end - start + 1) as f64;
                    l + (r - l) * f
                }
                (Some(l), None) => l,
                (None, Some(r)) => r,
                (None, None) => 0.0,
            };
            interpolated += 1;
        }
        p = end;
    }
    Ok(ResampledTrace { interval, window, values, interpolated })
}

/// A detected multiplication peak.
#[derive(Debug, Clone, Copy)]
pub struct Peak {
    pub index: usize,
    /// Grid time, cycles from trace start.
    pub time: f64,
    pub value: f64,
}

/// Local maxima of the energy signal, with plateau handling, then two
/// cleanups: maxima closer than one multiplication collapse to the higher
/// one, and candidates below 90% of the rolling median of the last ten
/// accepted peaks are dropped.
pub fn detect_peaks(rt: &ResampledTrace, mult_time_cycles: f64) -> Vec<Peak> {
    let vals = &rt.values;
    let n = vals.len();
    let mut candidates: Vec<Peak> = Vec::new();
    let mut i = 0usize;
    while i < n {
        let mut j = i + 1;
        while j < n && vals[j] == vals[i] {
            j += 1;
        }
        let rising = i > 0 && vals[i - 1] < vals[i];
        let falling = j < n && vals[j] < vals[i];
        if rising && falling && vals[i] > 0.0 {
            let mid = (i + j - 1) / 2;
            candidates.push(Peak {
                index: mid,
                time: (mid as u64 * rt.interval) as f64,
                value: vals[i],
            });
        }
        i = j;
    }
    // Collapse maxima closer than one multiplication.
    let mut merged: Vec<Peak> = Vec::new();
    for p in candidates {
        if let Some(last) = merged.last_mut() {
            if p.time - last.time < mult_time_cycles {
                if p.value > last.value {
                    *last = p;
                }
                continue;
            }
        }
        merged.push(p);
    }
    // Rolling-median height filter.
    let mut kept: Vec<Peak> = Vec::new();
    for p in merged {
        if !kept.is_empty() {
            let lo = kept.len().saturating_sub(10);
            let mut heights: Vec<f64> = kept[lo..].iter().map(|q| q.value).collect();
            heights.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = heights[heights.len() / 2];
            if p.value < 0.9 * median {
                continue;
            }
        }
        kept.push(p);
    }
    kept
}

/// Turn peak times into exponent bits: every peak is a multiplication (a one
/// bit), and a gap of (z + 2) multiplication times between adjacent peaks
/// spans one squaring, z zero-bit squarings, and the next multiplication.
pub fn extract_partial_key(peaks: &[Peak], mult_time_cycles: f64) -> Vec<u8> {
    if peaks.is_empty() {
        return Vec::new();
    }
    let mut bits = vec![1u8];
    for w in peaks.windows(2) {
        let gap = w[1].time - w[0].time;
        let zeros = ((gap / mult_time_cycles).round() as i64 - 2).max(0) as usize;
        bits.extend(std::iter::repeat(0).take(zeros));
        bits.push(1);
    }
    bits
}

/// One step of an edit script transforming a source bit string into a target,
/// applied at a cursor that starts at the window head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EditOp {
    /// Source and target agree; advance the cursor.
    Match,
    /// Replace the cursor bit, then advance.
    Substitute(u8),
    /// Remove the cursor bit.
    Delete,
    /// Insert a bit at the cursor, then advance past it.
    Insert(u8),
}

/// Levenshtein distance in O(min-row) memory; no script.
pub fn edit_distance(a: &[u8], b: &[u8]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Full dynamic program with a canonical backtrace: on ties prefer
/// match/substitute, then delete, then insert. Applying the returned script
/// with [`apply_script`] transforms `src` into `dst` exactly.
pub fn edit_script(src: &[u8], dst: &[u8]) -> (usize, Vec<EditOp>) {
    let m = src.len();
    let n = dst.len();
    let mut dp = vec![vec![0usize; n + 1]; m + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=n {
        dp[0][j] = j;
    }
    for i in 1..=m {
        for j in 1..=n {
            let sub = dp[i - 1][j - 1] + usize::from(src[i - 1] != dst[j - 1]);
            dp[i][j] = sub.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
        }
    }
    let mut ops = Vec::new();
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let cost = usize::from(src[i - 1] != dst[j - 1]);
            if dp[i][j] == dp[i - 1][j - 1] + cost {
                ops.push(if cost == 0 { EditOp::Match } else { EditOp::Substitute(dst[j - 1]) });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && dp[i][j] == dp[i - 1][j] + 1 {
            ops.push(EditOp::Delete);
            i -= 1;
            continue;
        }
        ops.push(EditOp::Insert(dst[j - 1]));
        j -= 1;
    }
    ops.reverse();
    (dp[m][n], ops)
}

/// Replay a script produced by [`edit_script`].
pub fn apply_script(src: &[u8], ops: &[EditOp]) -> Vec<u8> {
    let mut out = src.to_vec();
    let mut cursor = 0usize;
    for op in ops {
        match *op {
            EditOp::Match => cursor += 1,
            EditOp::Substitute(v) => {
                out[cursor] = v;
                cursor += 1;
            }
            EditOp::Delete => {
                out.remove(cursor);
            }
            EditOp::Insert(v) => {
                out.insert(cursor, v);
                cursor += 1;
            }
        }
    }
    out
}

/// How the merge repaired one partial key.
#[derive(Debug, Clone, Copy, Default, serde::Serialize)]
pub struct KeyMergeStats {
    pub substitutes: usize,
    pub deletes: usize,
    pub inserts: usize,
    /// Positions where scripts gave no usable action and the majority bit was
    /// forced in directly.
    pub fallbacks: usize,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MergeStats {
    /// Tied votes, counted as ones.
    pub ties: usize,
    pub per_key: Vec<KeyMergeStats>,
    /// Final merged length.
    pub merged_len: usize,
}

/// Bit-level majority merge of partial keys. At each position the surviving
/// keys vote (ties count as one, since multiplications are easier to miss
/// than to hallucinate); disagreeing keys are realigned by replaying the
/// majority edit script against a lookahead window, with a direct fix as a
/// last resort. The merge stops once half or fewer keys still have bits left.
pub fn merge_keys(
    partials: &[Vec<u8>],
    lookahead: usize,
) -> Result<(Vec<u8>, MergeStats), SimError> {
    if partials.is_empty() {
        return Err(SimError::NoPartialKeys);
    }
    let n = partials.len();
    let mut keys: Vec<Vec<u8>> = partials.to_vec();
    let mut stats = MergeStats { ties: 0, per_key: vec![KeyMergeStats::default(); n], merged_len: 0 };
    let mut out: Vec<u8> = Vec::new();
    let longest = keys.iter().map(Vec::len).max().unwrap_or(0);
    let mut i = 0usize;
    // The alive-majority check is the real termination condition; the bound
    // only guards against pathological insert growth.
    while i < longest.saturating_mul(2) + lookahead + 64 {
        let alive: Vec<usize> = (0..n).filter(|&k| keys[k].len() > i).collect();
        if alive.len() * 2 <= n {
            break;
        }
        let c1 = alive.iter().filter(|&&k| keys[k][i] == 1).count();
        let c0 = alive.len() - c1;
        if c1 == c0 {
            stats.ties += 1;
        }
        let bit = u8::from(c1 >= c0);
        out.push(bit);
        let correct: Vec<usize> = alive.iter().copied().filter(|&k| keys[k][i] == bit).collect();
        let wrong: Vec<usize> = alive.iter().copied().filter(|&k| keys[k][i] != bit).collect();
        if !correct.is_empty() {
            let windows: Vec<Vec<u8>> = correct
                .iter()
                .map(|&c| {
                    let end = keys[c].len().min(i + lookahead);
                    keys[c][i..end].to_vec()
                })
                .collect();
            for &w in &wrong {
                align_key(&mut keys[w], i, bit, &windows, lookahead, &mut stats.per_key[w]);
            }
        }
        i += 1;
    }
    stats.merged_len = out.len();
    Ok((out, stats))
}

/// Bring `key[i]` into agreement with `bit` by replaying the majority edit
/// action at each script step; scripts target the correct keys' windows.
fn align_key(
    key: &mut Vec<u8>,
    i: usize,
    bit: u8,
    windows: &[Vec<u8>],
    lookahead: usize,
    stats: &mut KeyMergeStats,
) {
    let end = key.len().min(i + lookahead);
    let src = key[i..end].to_vec();
    let scripts: Vec<Vec<EditOp>> =
        windows.iter().map(|w| edit_script(&src, w).1).collect();
    let mut ai = 0usize;
    while key.get(i).copied() != Some(bit) && ai < lookahead {
        let mut counts: HashMap<EditOp, usize> = HashMap::new();
        for s in &scripts {
            if let Some(op) = s.get(ai) {
                *counts.entry(*op).or_insert(0) += 1;
            }
        }
        let winner = counts.into_iter().max_by_key(|&(op, c)| (c, op_priority(op)));
        match winner {
            Some((EditOp::Substitute(v), _)) if i < key.len() => {
                key[i] = v;
                stats.substitutes += 1;
            }
            Some((EditOp::Delete, _)) if i < key.len() => {
                key.remove(i);
                stats.deletes += 1;
            }
            Some((EditOp::Insert(v), _)) => {
                key.insert(i.min(key.len()), v);
                stats.inserts += 1;
            }
            _ => break,
        }
        ai += 1;
    }
    if key.get(i).copied() != Some(bit) {
        if i < key.len() {
            key[i] = bit;
        } else {
            while key.len() < i {
                key.push(0);
            }
            key.push(bit);
        }
        stats.fallbacks += 1;
    }
}

/// Deterministic tie-break between equally voted actions: prefer the ones
/// that make progress at the cursor.
fn op_priority(op: EditOp) -> (u8, u8) {
    match op {
        EditOp::Substitute(v) => (3, v),
        EditOp::Delete => (2, 0),
        EditOp::Insert(v) => (1, v),
        EditOp::Match => (0, 0),
    }
}

/// Fraction of the true key that remains wrong: Levenshtein distance between
/// recovered and truth, over the true length.
pub fn bit_error_rate(recovered: &[u8], truth: &[u8]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    edit_distance(recovered, truth) as f64 / truth.len() as f64
}

/// Full single-trace pipeline using the parameters stamped into the trace:
/// resample, find peaks, read off bits.
pub fn partial_from_trace(trace: &RawTrace) -> Result<Vec<u8>, SimError> {
    let (interval, window) = effective_resample_params(
        trace.meta.resample_interval,
        trace.meta.resample_window,
        trace.meta.predicted_mult_cycles,
    );
    let rt = resample(trace, interval, window, trace.meta.outlier_factor)?;
    let peaks = detect_peaks(&rt, trace.meta.predicted_mult_cycles);
    Ok(extract_partial_key(&peaks, trace.meta.predicted_mult_cycles))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacker::{RawTrace, TraceMeta};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn meta_for(span_units: u64) -> TraceMeta {
        TraceMeta {
            trace_index: 0,
            noise_seed: 0,
            config_digest: String::new(),
            set_index: 0,
            slice: 0,
            counter_resolution: 1.0,
            key_bits: 64,
            span_units,
            start_cycle: 0,
            predicted_mult_cycles: 10_000.0,
            probes: 0,
            mean_probe_cycles: 0.0,
            threshold_units: 0,
            resample_interval: 1000,
            resample_window: 10_000,
            outlier_factor: 10.0,
        }
    }

    fn trace_with(events: &[(u64, u64)], span: u64) -> RawTrace {
        RawTrace {
            timestamps: events.iter().map(|e| e.0).collect(),
            latencies: events.iter().map(|e| e.1).collect(),
            meta: meta_for(span),
        }
    }

    #[test]
    fn resample_sums_squared_latency_per_window() {
        let tr = trace_with(&[(15_000, 200), (15_500, 210)], 100_000);
        let rt = resample(&tr, 1000, 10_000, 10.0).unwrap();
        assert_eq!(rt.values.len(), 101);
        let expect = (200.0f64 * 200.0 + 210.0 * 210.0) / 10_000.0;
        assert!((rt.values[15] - expect).abs() < 1e-9);
        // The last window whose half-open span still reaches both events.
        assert!((rt.values[20] - expect).abs() < 1e-9);
        // One step further and both fall out; far windows are empty too.
        assert_eq!(rt.values[21], 0.0);
        assert_eq!(rt.values[50], 0.0);
        assert_eq!(rt.interpolated, 0);
    }

    #[test]
    fn resample_discards_outliers_and_interpolates() {
        // Median latency 210; the 10_000-latency probe at t=50_000 exceeds
        // 10x median and leaves its windows with no valid samples.
        let tr = trace_with(&[(15_000, 200), (15_500, 210), (50_000, 10_000)], 100_000);
        let rt = resample(&tr, 1000, 10_000, 10.0).unwrap();
        assert!(rt.interpolated > 0);
        // Neighbors of the discarded stretch are zero, so it interpolates to zero.
        assert_eq!(rt.values[50], 0.0);
    }

    #[test]
    fn resample_rejects_short_traces() {
        let tr = trace_with(&[], 5_000);
        match resample(&tr, 1000, 10_000, 10.0) {
            Err(SimError::TraceTooShort { span, window }) => {
                assert_eq!(span, 5_000);
                assert_eq!(window, 10_000);
            }
            other => panic!("expected TraceTooShort, got {other:?}"),
        }
    }

    #[test]
    fn effective_params_shrink_for_fast_multipliers() {
        assert_eq!(effective_resample_params(1000, 10_000, 36_000.0), (1000, 10_000));
        let (i, w) = effective_resample_params(1000, 10_000, 2930.0);
        assert_eq!(w, 976);
        assert_eq!(i, 195);
        assert!(i >= 1 && w >= i);
    }

    #[test]
    fn peaks_found_with_plateaus_and_dedup() {
        let mut vals = vec![0.0; 100];
        // Plateau peak around 20..22, lone peak at 50, twin at 52 (closer
        // than one mult; lower, so dropped), peak at 80.
        vals[20] = 5.0;
        vals[21] = 5.0;
        vals[22] = 5.0;
        vals[50] = 6.0;
        vals[52] = 4.8;
        vals[80] = 5.5;
        let rt = ResampledTrace { interval: 1000, window: 10_000, values: vals, interpolated: 0 };
        let peaks = detect_peaks(&rt, 10_000.0);
        let idx: Vec<usize> = peaks.iter().map(|p| p.index).collect();
        assert_eq!(idx, vec![21, 50, 80]);
    }

    #[test]
    fn low_peaks_fall_to_rolling_median_filter() {
        let mut vals = vec![0.0; 200];
        for p in 0..10 {
            vals[10 + p * 15] = 10.0;
        }
        vals[160] = 3.0; // below 90% of median 10
        vals[180] = 9.5; // above
        let rt = ResampledTrace { interval: 1000, window: 10_000, values: vals, interpolated: 0 };
        let peaks = detect_peaks(&rt, 10_000.0);
        assert_eq!(peaks.len(), 11);
        assert!(peaks.iter().all(|p| p.index != 160));
        assert!(peaks.iter().any(|p| p.index == 180));
    }

    #[test]
    fn gaps_decode_to_zero_runs() {
        let t = 10_000.0;
        let mk = |xs: &[f64]| -> Vec<Peak> {
            xs.iter().map(|&x| Peak { index: 0, time: x * t, value: 1.0 }).collect()
        };
        // Gaps of 2T, 3T, 2T: adjacent ones, then one zero, then adjacent.
        let bits = extract_partial_key(&mk(&[0.0, 2.0, 5.0, 7.0]), t);
        assert_eq!(bits, vec![1, 1, 0, 1, 1]);
        // 4T gap: two zeros.
        let bits = extract_partial_key(&mk(&[0.0, 4.0]), t);
        assert_eq!(bits, vec![1, 0, 0, 1]);
        assert!(extract_partial_key(&[], t).is_empty());
    }

    /// Exponential-time reference Levenshtein for small inputs.
    fn naive_distance(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, None) => 0,
            (None, Some(_)) => b.len(),
            (Some(_), None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = naive_distance(ra, rb) + usize::from(x != y);
                let del = naive_distance(ra, b) + 1;
                let ins = naive_distance(a, rb) + 1;
                sub.min(del).min(ins)
            }
        }
    }

    #[test]
    fn edit_script_known_case() {
        let (d, ops) = edit_script(&[1, 0, 1, 1, 1], &[1, 0, 1, 0, 1]);
        assert_eq!(d, 1);
        assert_eq!(apply_script(&[1, 0, 1, 1, 1], &ops), vec![1, 0, 1, 0, 1]);
    }

    proptest! {
        #[test]
        fn edit_script_matches_naive_and_applies(
            a in proptest::collection::vec(0u8..2, 0..10),
            b in proptest::collection::vec(0u8..2, 0..10),
        ) {
            let (d, ops) = edit_script(&a, &b);
            prop_assert_eq!(d, naive_distance(&a, &b));
            prop_assert_eq!(d, edit_distance(&a, &b));
            prop_assert_eq!(apply_script(&a, &ops), b.clone());
            prop_assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
            prop_assert_eq!(d == 0, a == b);
            // Never more ops than the longer string, never fewer than the distance.
            prop_assert!(ops.len() <= a.len() + b.len());
        }

        #[test]
        fn identical_partials_merge_to_themselves(
            key in proptest::collection::vec(0u8..2, 1..40),
            copies in 1usize..6,
        ) {
            let partials = vec![key.clone(); copies];
            let (merged, stats) = merge_keys(&partials, 20).unwrap();
            prop_assert_eq!(merged, key);
            prop_assert_eq!(stats.ties, 0);
            for s in &stats.per_key {
                prop_assert_eq!(s.substitutes + s.deletes + s.inserts + s.fallbacks, 0);
            }
        }
    }

    #[test]
    fn majority_fixes_isolated_errors() {
        let truth = vec![1, 0, 1, 1, 1, 0, 1, 0, 1, 1];
        let mut p2 = truth.clone();
        p2[4] = 0; // substitution error
        let mut p3 = truth.clone();
        p3.remove(6); // missed bit
        let partials = vec![truth.clone(), p2, p3, truth.clone(), truth.clone()];
        let (merged, stats) = merge_keys(&partials, 5).unwrap();
        assert_eq!(merged, truth);
        // The deletion in p3 must have been repaired by an insert.
        assert!(stats.per_key[2].inserts + stats.per_key[2].fallbacks > 0);
    }

    #[test]
    fn ties_count_as_ones() {
        let partials = vec![vec![1, 1, 0], vec![1, 0, 0], vec![1, 1, 1], vec![1, 0, 1]];
        let (merged, stats) = merge_keys(&partials, 4).unwrap();
        assert_eq!(merged[0], 1);
        // Positions 1 and 2 are 2-2 splits and resolve to 1.
        assert_eq!(merged[1], 1);
        assert_eq!(merged[2], 1);
        assert_eq!(stats.ties, 2);
    }

    #[test]
    fn merge_stops_at_majority_exhaustion() {
        let partials = vec![
            vec![1, 0, 1, 1, 0, 1, 0, 1, 1, 1],
            vec![1, 0, 1, 1, 0, 1, 0, 1, 1, 1],
            vec![1, 0, 1, 1],
        ];
        let (merged, _) = merge_keys(&partials, 5).unwrap();
        // Two of three keys run the full length: merge continues to 10.
        assert_eq!(merged.len(), 10);
        let partials = vec![vec![1, 0, 1, 1, 0, 1, 0, 1, 1, 1], vec![1, 0, 1, 1]];
        let (merged, _) = merge_keys(&partials, 5).unwrap();
        // One of two alive is not a strict majority: stop at the short key.
        assert_eq!(merged.len(), 4);
    }

    #[test]
    fn merge_recovers_from_independent_noise() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let truth: Vec<u8> = (0..60).map(|_| rng.gen_range(0..2u8)).collect();
        let mut partials = Vec::new();
        for _ in 0..5 {
            let mut p = truth.clone();
            // One substitution and one deletion at random spots.
            let s = rng.gen_range(0..p.len());
            p[s] ^= 1;
            let d = rng.gen_range(0..p.len());
            p.remove(d);
            partials.push(p);
        }
        let (merged, _) = merge_keys(&partials, 20).unwrap();
        assert_eq!(
            merged, truth,
            "five copies with one flip and one drop each must merge clean"
        );
    }

    #[test]
    fn empty_partials_error() {
        assert!(matches!(merge_keys(&[], 20), Err(SimError::NoPartialKeys)));
    }

    #[test]
    fn error_rate_is_normalized_distance() {
        assert_eq!(bit_error_rate(&[1, 0, 1, 1], &[1, 0, 1, 1]), 0.0);
        assert_eq!(bit_error_rate(&[1, 0, 0, 1], &[1, 0, 1, 1]), 0.25);
        assert_eq!(bit_error_rate(&[], &[1, 1]), 1.0);
    }
}
