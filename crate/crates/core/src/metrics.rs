//! Rhythm and quality metrics: percentage of matched beats (PMB), motion
//! beats from joint deceleration, MAJE/MAD joint errors, the Fréchet
//! distance between gesture feature distributions, and lexeme diversity.

use crate::data::motion::MotionClip;
use crate::data::skeleton::{Skeleton, NUM_JOINTS};
use crate::error::{Error, Result};
use crate::math;
use nalgebra::{DMatrix, DVector};
use std::path::Path;

/// Motion or audio beats: strictly increasing times in seconds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BeatSequence {
    pub times: Vec<f64>,
}

impl BeatSequence {
    pub fn new(times: Vec<f64>) -> Self {
        assert!(times.windows(2).all(|w| w[0] < w[1]), "beats must increase");
        BeatSequence { times }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Aggregate joint speed per frame: the sum over joints of FK position
/// speed magnitudes, Gaussian-smoothed over 5 frames.
pub fn aggregate_joint_speed(clip: &MotionClip, skeleton: &Skeleton) -> Vec<f64> {
    let n = clip.num_frames();
    if n < 2 {
        return vec![0.0; n];
    }
    let positions = skeleton.fk_block(clip.frames());
    let mut speed = vec![0.0; n];
    for k in 1..n {
        let mut total = 0.0;
        for j in 0..NUM_JOINTS {
            let a = positions[k][j];
            let b = positions[k - 1][j];
            total += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2))
                .sqrt();
        }
        speed[k] = total * clip.fps();
    }
    speed[0] = speed[1];
    math::smooth_replicated(&speed, &math::gaussian_kernel(5))
}

/// Motion beats: strict local minima of the smoothed aggregate speed whose
/// preceding 0.2 s window shows mean deceleration above the gate
/// (`decel_percentile` of the clip's positive decelerations).
pub fn extract_motion_beats(
    clip: &MotionClip,
    skeleton: &Skeleton,
    decel_percentile: f64,
) -> BeatSequence {
    let n = clip.num_frames();
    if n < 3 {
        return BeatSequence::default();
    }
    let speed = aggregate_joint_speed(clip, skeleton);
    let fps = clip.fps();
    // deceleration series: positive where the speed is dropping
    let decel: Vec<f64> = (0..n)
        .map(|k| if k == 0 { 0.0 } else { (speed[k - 1] - speed[k]) * fps })
        .collect();
    // rounding noise on near-constant speed must not count as deceleration
    let speed_scale = speed.iter().cloned().fold(0.0f64, f64::max);
    let floor = 1e-9 * speed_scale.max(1e-12);
    let positive: Vec<f64> = decel.iter().copied().filter(|&d| d > floor).collect();
    if positive.is_empty() {
        return BeatSequence::default();
    }
    let gate = math::percentile(&positive, decel_percentile).max(floor);
    let window = (0.2 * fps).round().max(1.0) as usize;

    let mut times = Vec::new();
    for k in 1..n - 1 {
        if !(speed[k] < speed[k - 1] && speed[k] < speed[k + 1]) {
            continue;
        }
        let lo = k.saturating_sub(window) + 1;
        let mean_decel = decel[lo..=k].iter().sum::<f64>() / (k - lo + 1) as f64;
        if mean_decel > gate {
            times.push(k as f64 / fps);
        }
    }
    BeatSequence { times }
}

/// Result of a PMB evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmbResult {
    /// Percentage in `[0, 100]`.
    pub percent: f64,
    /// Set when there were no motion beats (the value defaults to 100).
    pub no_motion_beats: bool,
}

/// Percentage of matched beats: motion beat `i` scans audio beats after the
/// last matched index; the first with `|b_m - b_a| < delta` matches and
/// consumes its index.
pub fn pmb(motion: &BeatSequence, audio: &BeatSequence, delta: f64) -> PmbResult {
    assert!(delta > 0.0, "delta must be positive");
    if motion.is_empty() {
        return PmbResult {
            percent: 100.0,
            no_motion_beats: true,
        };
    }
    let mut matches = 0usize;
    let mut next_start = 0usize; // j*_{i-1} + 1
    for &bm in &motion.times {
        let mut j = next_start;
        while j < audio.times.len() {
            let ba = audio.times[j];
            if (bm - ba).abs() < delta {
                matches += 1;
                next_start = j + 1;
                break;
            }
            if ba >= bm + delta {
                break; // audio beats only get further away
            }
            j += 1;
        }
    }
    PmbResult {
        percent: 100.0 * matches as f64 / motion.len() as f64,
        no_motion_beats: false,
    }
}

/// PMB over a sweep of thresholds, for the threshold-sensitivity curve.
pub fn pmb_curve(
    motion: &BeatSequence,
    audio: &BeatSequence,
    deltas: &[f64],
) -> Vec<(f64, f64)> {
    deltas
        .iter()
        .map(|&d| (d, pmb(motion, audio, d).percent))
        .collect()
}

/// Mean absolute joint position error (mm) and mean acceleration difference
/// (mm/s^2) between a generated clip and its reference.
pub fn joint_errors(
    generated: &MotionClip,
    reference: &MotionClip,
    skeleton: &Skeleton,
) -> Result<(f64, f64)> {
    if generated.num_frames() != reference.num_frames() {
        return Err(Error::Argument(format!(
            "frame counts differ: {} vs {}",
            generated.num_frames(),
            reference.num_frames()
        )));
    }
    if generated.fps() != reference.fps() {
        return Err(Error::Argument("frame rates differ".into()));
    }
    let n = generated.num_frames();
    let pg = skeleton.fk_block(generated.frames());
    let pr = skeleton.fk_block(reference.frames());

    let mut maje = 0.0;
    for k in 0..n {
        for j in 0..NUM_JOINTS {
            maje += dist3(&pg[k][j], &pr[k][j]);
        }
    }
    maje = maje / (n * NUM_JOINTS) as f64 * 1000.0;

    // accelerations by central differences (interior frames only)
    let fps2 = generated.fps() * generated.fps();
    let accel = |p: &[Vec<[f64; 3]>], k: usize, j: usize| -> [f64; 3] {
        [
            (p[k + 1][j][0] - 2.0 * p[k][j][0] + p[k - 1][j][0]) * fps2,
            (p[k + 1][j][1] - 2.0 * p[k][j][1] + p[k - 1][j][1]) * fps2,
            (p[k + 1][j][2] - 2.0 * p[k][j][2] + p[k - 1][j][2]) * fps2,
        ]
    };
    let mut mad = 0.0;
    let mut count = 0usize;
    for k in 1..n.saturating_sub(1) {
        for j in 0..NUM_JOINTS {
            let ag = accel(&pg, k, j);
            let ar = accel(&pr, k, j);
            mad += ((ag[0] - ar[0]).powi(2) + (ag[1] - ar[1]).powi(2) + (ag[2] - ar[2]).powi(2))
                .sqrt();
            count += 1;
        }
    }
    if count > 0 {
        mad = mad / count as f64 * 1000.0;
    }
    Ok((maje, mad))
}

fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Fréchet distance between Gaussian fits of two feature sets:
/// `||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})`.
///
/// Sets smaller than `dim + 1` get diagonal shrinkage (`S + 1e-6 I`). The
/// implementation orders its arguments canonically, so the value is exactly
/// symmetric.
pub fn fgd(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    Ok(fgd_with_diagnostics(a, b)?.0)
}

pub fn fgd_with_diagnostics(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(f64, bool)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("fgd needs non-empty feature sets".into()));
    }
    let dim = a[0].len();
    if b[0].len() != dim {
        return Err(Error::Argument("feature dimensions differ".into()));
    }
    // canonical order for exact symmetry
    let (x, y) = if lexicographic_leq(a, b) { (a, b) } else { (b, a) };

    let (mu_x, mut sig_x) = gaussian_fit(x);
    let (mu_y, mut sig_y) = gaussian_fit(y);
    let mut shrunk = false;
    for (set, sig) in [(x, &mut sig_x), (y, &mut sig_y)] {
        if set.len() <= dim || !is_positive_semidefinite(sig) {
            for i in 0..dim {
                sig[(i, i)] += 1e-6;
            }
            shrunk = true;
        }
    }

    let mean_term = (&mu_x - &mu_y).norm_squared();
    let sqrt_x = sqrtm(&sig_x);
    let inner = &sqrt_x * &sig_y * &sqrt_x;
    let cross = sqrtm(&inner);
    let trace_term = sig_x.trace() + sig_y.trace() - 2.0 * cross.trace();
    Ok((mean_term + trace_term, shrunk))
}

fn lexicographic_leq(a: &[Vec<f64>], b: &[Vec<f64>]) -> bool {
    let key = |set: &[Vec<f64>]| -> Vec<f64> {
        let dim = set[0].len();
        let mut mean = vec![0.0; dim + 1];
        for v in set {
            for (m, x) in mean.iter_mut().zip(v.iter()) {
                *m += x;
            }
        }
        for m in mean.iter_mut() {
            *m /= set.len() as f64;
        }
        mean[dim] = set.len() as f64;
        mean
    };
    let ka = key(a);
    let kb = key(b);
    for (x, y) in ka.iter().zip(kb.iter()) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    true
}

fn gaussian_fit(set: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = set.len();
    let dim = set[0].len();
    let mut mu = DVector::zeros(dim);
    for v in set {
        for (i, &x) in v.iter().enumerate() {
            mu[i] += x;
        }
    }
    mu /= n as f64;
    let mut sigma = DMatrix::zeros(dim, dim);
    for v in set {
        let d = DVector::from_iterator(dim, v.iter().copied()) - &mu;
        sigma += &d * d.transpose();
    }
    // unbiased estimate when possible
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    sigma /= denom;
    (mu, sigma)
}

fn is_positive_semidefinite(m: &DMatrix<f64>) -> bool {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.iter().all(|&e| e > -1e-10)
}

/// Symmetric PSD matrix square root via eigendecomposition; tiny negative
/// eigenvalues from rounding are clamped to zero.
fn sqrtm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut d = DMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        d[(i, i)] = eig.eigenvalues[i].max(0.0).sqrt();
    }
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Shannon entropy (nats) of the empirical lexeme distribution.
pub fn diversity(lexemes: &[usize], n_lexemes: usize) -> f64 {
    assert!(!lexemes.is_empty(), "diversity of an empty sequence");
    let mut counts = vec![0usize; n_lexemes];
    for &l in lexemes {
        counts[l] += 1;
    }
    let total = lexemes.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// One row of the evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub clip_id: String,
    pub maje_mm: f64,
    pub mad_mm_s2: f64,
    pub fgd: f64,
    pub pmb_pct: f64,
    pub diversity_nats: f64,
}

pub fn save_report_csv(path: &Path, rows: &[MetricReport]) -> Result<()> {
    let mut out = String::from("clip_id,maje_mm,mad_mm_s2,fgd,pmb_pct,diversity_nats\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.clip_id, r.maje_mm, r.mad_mm_s2, r.fgd, r.pmb_pct, r.diversity_nats
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn save_pmb_curve_csv(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    let mut out = String::from("delta_s,pmb_pct\n");
    for (delta, pct) in curve {
        out.push_str(&format!("{delta},{pct}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Softmax-regression probe: trains on even-indexed samples, reports
/// accuracy on odd-indexed ones. Used to compare feature levels.
pub fn linear_probe_accuracy(features: &[Vec<f64>], labels: &[usize], n_classes: usize) -> f64 {
    assert_eq!(features.len(), labels.len());
    assert!(features.len() >= 4, "probe needs a few samples");
    let dim = features[0].len();
    let train: Vec<usize> = (0..features.len()).filter(|i| i % 2 == 0).collect();
    let test: Vec<usize> = (0..features.len()).filter(|i| i % 2 == 1).collect();

    // plain gradient descent on multinomial logistic regression
    let mut w = vec![vec![0.0; dim + 1]; n_classes];
    let lr = 0.5;
    for _ in 0..400 {
        let mut grad = vec![vec![0.0; dim + 1]; n_classes];
        for &i in &train {
            let logits: Vec<f64> = (0..n_classes)
                .map(|c| {
                    w[c][dim]
                        + features[i]
                            .iter()
                            .zip(&w[c][..dim])
                            .map(|(x, wc)| x * wc)
                            .sum::<f64>()
                })
                .collect();
            let probs = math::softmax(&logits);
            for c in 0..n_classes {
                let err = probs[c] - if labels[i] == c { 1.0 } else { 0.0 };
                for (g, x) in grad[c].iter_mut().zip(features[i].iter()) {
                    *g += err * x;
                }
                grad[c][dim] += err;
            }
        }
        let n = train.len() as f64;
        for c in 0..n_classes {
            for (wc, g) in w[c].iter_mut().zip(grad[c].iter()) {
                *wc -= lr * g / n;
            }
        }
    }
    let mut correct = 0usize;
    for &i in &test {
        let logits: Vec<f64> = (0..n_classes)
            .map(|c| {
                w[c][dim]
                    + features[i]
                        .iter()
                        .zip(&w[c][..dim])
                        .map(|(x, wc)| x * wc)
                        .sum::<f64>()
            })
            .collect();
        let best = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if best == labels[i] {
            correct += 1;
        }
    }
    correct as f64 / test.len() as f64
}
