//! Connectionist temporal classification: loss, analytic gradient, greedy decoding
//! and a brute-force path enumeration used as a test oracle.
//!
//! The blank is always the last class (`C - 1`). Alpha/beta recursions run in log
//! space so long lines cannot underflow.

use ndarray::{Array2, ArrayView1, Axis};

use crate::textcore::LabelSeq;

#[derive(Debug, thiserror::Error)]
pub enum CtcError {
    #[error("label of length {label_len} needs at least {required} frames, got {frames}")]
    Infeasible {
        label_len: usize,
        required: usize,
        frames: usize,
    },
    #[error("logit matrix must have at least one frame and two classes, got {frames}x{classes}")]
    BadShape { frames: usize, classes: usize },
    #[error("logit matrix contains a non-finite entry at frame {frame}, class {class}")]
    NonFinite { frame: usize, class: usize },
    #[error("label index {0} is not a character class")]
    BadLabel(usize),
    #[error("brute force over {0} paths is too large")]
    TooLarge(f64),
}

/// Per-frame unnormalised class scores, `T x C` with the blank in the last column.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix(Array2<f64>);

impl LogitMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self, CtcError> {
        let (frames, classes) = values.dim();
        if frames == 0 || classes < 2 {
            return Err(CtcError::BadShape { frames, classes });
        }
        if let Some(((frame, class), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(CtcError::NonFinite { frame, class });
        }
        Ok(Self(values))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, CtcError> {
        let t = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let arr = Array2::from_shape_vec((t, c), flat).map_err(|_| CtcError::BadShape {
            frames: t,
            classes: c,
        })?;
        Self::new(arr)
    }

    pub fn frames(&self) -> usize {
        self.0.nrows()
    }

    pub fn classes(&self) -> usize {
        self.0.ncols()
    }

    pub fn blank(&self) -> usize {
        self.0.ncols() - 1
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Row-stochastic matrix of per-frame class posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix(Array2<f64>);

impl PosteriorMatrix {
    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn row(&self, t: usize) -> ArrayView1<'_, f64> {
        self.0.row(t)
    }
}

pub fn logsumexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn log_softmax_rows(logits: &LogitMatrix) -> Array2<f64> {
    let mut out = logits.0.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax_rows(logits: &LogitMatrix) -> PosteriorMatrix {
    let mut out = logits.0.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    PosteriorMatrix(out)
}

/// The many-to-one CTC map: merge adjacent repeats, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> LabelSeq {
    let mut out = Vec::with_capacity(path.len());
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != blank {
            out.push(p);
        }
        prev = Some(p);
    }
    LabelSeq(out)
}

/// Minimum number of frames that can emit `label`: one per symbol plus a separating
/// blank between adjacent repeats.
pub fn min_frames(label: &[usize]) -> usize {
    label.len() + label.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_label(logits: &LogitMatrix, label: &LabelSeq) -> Result<(), CtcError> {
    if let Some(&bad) = label.0.iter().find(|&&l| l >= logits.blank()) {
        return Err(CtcError::BadLabel(bad));
    }
    let required = min_frames(&label.0);
    if required > logits.frames() {
        return Err(CtcError::Infeasible {
            label_len: label.len(),
            required,
            frames: logits.frames(),
        });
    }
    Ok(())
}

fn extended(label: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * label.len() + 1);
    ext.push(blank);
    for &l in label {
        ext.push(l);
        ext.push(blank);
    }
    ext
}

struct Lattice {
    ext: Vec<usize>,
    log_alpha: Array2<f64>,
    log_beta: Array2<f64>,
    log_prob: f64,
}

fn lattice(logp: &Array2<f64>, label: &[usize], blank: usize) -> Lattice {
    let t_len = logp.nrows();
    let ext = extended(label, blank);
    let s_len = ext.len();
    let neg = f64::NEG_INFINITY;

    // alpha includes the emission at t; beta covers frames t+1.. only.
    let mut a = Array2::from_elem((t_len, s_len), neg);
    a[[0, 0]] = logp[[0, blank]];
    if s_len > 1 {
        a[[0, 1]] = logp[[0, ext[1]]];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = a[[t - 1, s]];
            if s >= 1 {
                acc = logsumexp(acc, a[[t - 1, s - 1]]);
            }
            if s >= 2 && ext[s] != blank && ext[s] != ext[s - 2] {
                acc = logsumexp(acc, a[[t - 1, s - 2]]);
            }
            if acc != neg {
                a[[t, s]] = acc + logp[[t, ext[s]]];
            }
        }
    }

    let mut b = Array2::from_elem((t_len, s_len), neg);
    b[[t_len - 1, s_len - 1]] = 0.0;
    if s_len > 1 {
        b[[t_len - 1, s_len - 2]] = 0.0;
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut acc = b[[t + 1, s]] + logp[[t + 1, ext[s]]];
            if s + 1 < s_len {
                acc = logsumexp(acc, b[[t + 1, s + 1]] + logp[[t + 1, ext[s + 1]]]);
            }
            if s + 2 < s_len && ext[s + 2] != blank && ext[s + 2] != ext[s] {
                acc = logsumexp(acc, b[[t + 1, s + 2]] + logp[[t + 1, ext[s + 2]]]);
            }
            b[[t, s]] = acc;
        }
    }

    let last = t_len - 1;
    let mut log_prob = a[[last, s_len - 1]];
    if s_len > 1 {
        log_prob = logsumexp(log_prob, a[[last, s_len - 2]]);
    }
    Lattice {
        ext,
        log_alpha: a,
        log_beta: b,
        log_prob,
    }
}

/// Negative log-probability of `label` summed over all aligning paths.
pub fn ctc_loss(logits: &LogitMatrix, label: &LabelSeq) -> Result<f64, CtcError> {
    check_label(logits, label)?;
    let logp = log_softmax_rows(logits);
    Ok(-lattice(&logp, &label.0, logits.blank()).log_prob)
}

/// Loss together with its gradient with respect to the logits.
pub fn ctc_loss_and_grad(
    logits: &LogitMatrix,
    label: &LabelSeq,
) -> Result<(f64, Array2<f64>), CtcError> {
    check_label(logits, label)?;
    let logp = log_softmax_rows(logits);
    let lat = lattice(&logp, &label.0, logits.blank());
    let (t_len, c) = logp.dim();
    let mut grad = logp.mapv(f64::exp);
    let mut occ = vec![f64::NEG_INFINITY; c];
    for t in 0..t_len {
        occ.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        for (s, &k) in lat.ext.iter().enumerate() {
            let v = lat.log_alpha[[t, s]] + lat.log_beta[[t, s]];
            occ[k] = logsumexp(occ[k], v);
        }
        for k in 0..c {
            if occ[k] != f64::NEG_INFINITY {
                grad[[t, k]] -= (occ[k] - lat.log_prob).exp();
            }
        }
    }
    Ok((-lat.log_prob, grad))
}

pub fn ctc_grad(logits: &LogitMatrix, label: &LabelSeq) -> Result<Array2<f64>, CtcError> {
    ctc_loss_and_grad(logits, label).map(|(_, g)| g)
}

/// Largest path count [`ctc_brute_force`] will enumerate.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// Exact probability of `label` by summing over all `C^T` frame paths.
pub fn ctc_brute_force(logits: &LogitMatrix, label: &LabelSeq) -> Result<f64, CtcError> {
    let (t_len, c) = logits.0.dim();
    let paths = (c as f64).powi(t_len as i32);
    if paths > BRUTE_FORCE_LIMIT {
        return Err(CtcError::TooLarge(paths));
    }
    if label.len() > t_len {
        return Ok(0.0);
    }
    let post = softmax_rows(logits);
    let blank = logits.blank();
    let mut path = vec![0usize; t_len];
    let mut total = 0.0;
    loop {
        if collapse(&path, blank) == *label {
            total += path
                .iter()
                .enumerate()
                .map(|(t, &k)| post.0[[t, k]])
                .product::<f64>();
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == t_len {
                return Ok(total);
            }
            path[i] += 1;
            if path[i] < c {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_decode(logits: &LogitMatrix) -> LabelSeq {
    let path: Vec<usize> = logits.0.axis_iter(Axis(0)).map(argmax).collect();
    collapse(&path, logits.blank())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_logits(rng: &mut ChaCha8Rng, t: usize, c: usize, scale: f64) -> LogitMatrix {
        let v: Vec<f64> = (0..t * c).map(|_| rng.random_range(-scale..scale)).collect();
        LogitMatrix::new(Array2::from_shape_vec((t, c), v).unwrap()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_rows(&LogitMatrix::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap());
        for v in p.row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax_rows(&LogitMatrix::from_rows(&[vec![1000.0, 0.0, 0.0]]).unwrap());
        assert!((p.row(0)[0] - 1.0).abs() < 1e-15);
        assert!(p.row(0).iter().all(|v| v.is_finite()));
        let p = softmax_rows(
            &LogitMatrix::from_rows(&[vec![2f64.ln(), 0.0, 0.0]]).unwrap(),
        );
        assert!((p.row(0)[0] - 0.5).abs() < 1e-15);
        assert!((p.row(0)[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(LogitMatrix::from_rows(&[vec![0.0]]).is_err());
        assert!(LogitMatrix::from_rows(&[]).is_err());
        assert!(matches!(
            LogitMatrix::from_rows(&[vec![0.0, f64::NAN]]),
            Err(CtcError::NonFinite { frame: 0, class: 1 })
        ));
    }

    #[test]
    fn collapse_examples() {
        let blank = 2;
        assert_eq!(collapse(&[0, 0, 2, 1], blank).0, vec![0, 1]);
        assert_eq!(collapse(&[2, 2], blank).0, Vec::<usize>::new());
        assert_eq!(collapse(&[0, 2, 0], blank).0, vec![0, 0]);
    }

    #[test]
    fn loss_examples() {
        let one = LogitMatrix::from_rows(&[vec![0.0; 3]]).unwrap();
        let l = ctc_loss(&one, &LabelSeq(vec![0])).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-12);

        // 9 paths over {a,b,blank}; "a" is reached by aa, a-, -a
        let two = LogitMatrix::from_rows(&[vec![0.0; 3], vec![0.0; 3]]).unwrap();
        let l = ctc_loss(&two, &LabelSeq(vec![0])).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lg = random_logits(&mut rng, 5, 4, 2.0);
        let logp = log_softmax_rows(&lg);
        let expect: f64 = -(0..5).map(|t| logp[[t, 3]]).sum::<f64>();
        let l = ctc_loss(&lg, &LabelSeq::default()).unwrap();
        assert!((l - expect).abs() < 1e-12);
    }

    #[test]
    fn infeasible_labels_error() {
        let lg = LogitMatrix::from_rows(&[vec![0.0; 3], vec![0.0; 3]]).unwrap();
        // "aa" needs a blank between the repeats: three frames
        assert!(matches!(
            ctc_loss(&lg, &LabelSeq(vec![0, 0])),
            Err(CtcError::Infeasible { required: 3, .. })
        ));
        assert!(ctc_loss(&lg, &LabelSeq(vec![0, 1])).is_ok());
        assert!(matches!(
            ctc_loss(&lg, &LabelSeq(vec![2])),
            Err(CtcError::BadLabel(2))
        ));
    }

    #[test]
    fn empty_label_gradient_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lg = random_logits(&mut rng, 4, 3, 3.0);
        let g = ctc_grad(&lg, &LabelSeq::default()).unwrap();
        let p = softmax_rows(&lg);
        for t in 0..4 {
            for k in 0..3 {
                let onehot = if k == 2 { 1.0 } else { 0.0 };
                assert!((g[[t, k]] - (p.values()[[t, k]] - onehot)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn brute_force_partitions_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let lg = random_logits(&mut rng, 3, 3, 2.0);
        // enumerate every label reachable in 3 frames over {0,1}
        let mut labels = vec![vec![]];
        for len in 1..=3 {
            for code in 0..(1usize << len) {
                labels.push((0..len).map(|i| (code >> i) & 1).collect::<Vec<_>>());
            }
        }
        let total: f64 = labels
            .into_iter()
            .map(|l| ctc_brute_force(&lg, &LabelSeq(l)).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(ctc_brute_force(&lg, &LabelSeq(vec![0, 1, 0, 1])).unwrap(), 0.0);
    }

    #[test]
    fn brute_force_refuses_large_instances() {
        let lg = LogitMatrix::new(Array2::zeros((20, 4))).unwrap();
        assert!(matches!(
            ctc_brute_force(&lg, &LabelSeq::default()),
            Err(CtcError::TooLarge(_))
        ));
    }

    #[test]
    fn greedy_examples() {
        let hot = |k: usize| {
            let mut r = vec![0.0; 3];
            r[k] = 5.0;
            r
        };
        let lg = LogitMatrix::from_rows(&[hot(0), hot(0), hot(2), hot(1)]).unwrap();
        assert_eq!(greedy_decode(&lg).0, vec![0, 1]);
        let lg = LogitMatrix::from_rows(&[hot(2), hot(2)]).unwrap();
        assert!(greedy_decode(&lg).is_empty());
        let lg = LogitMatrix::from_rows(&[hot(0), hot(2), hot(0)]).unwrap();
        assert_eq!(greedy_decode(&lg).0, vec![0, 0]);
    }

    #[test]
    fn large_logits_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let lg = random_logits(&mut rng, 8, 4, 1e4);
            let (l, g) = ctc_loss_and_grad(&lg, &LabelSeq(vec![0, 1, 1])).unwrap();
            assert!(!l.is_nan());
            assert!(g.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn loss_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let lg = random_logits(&mut rng, 6, 4, 2.0);
        let label = LabelSeq(vec![0, 2, 2, 1]);
        // swap classes 0 and 2 (blank stays last)
        let perm = [2usize, 1, 0, 3];
        let mut swapped = lg.values().clone();
        for t in 0..6 {
            for k in 0..4 {
                swapped[[t, perm[k]]] = lg.values()[[t, k]];
            }
        }
        let swapped = LogitMatrix::new(swapped).unwrap();
        let relabeled = LabelSeq(label.0.iter().map(|&k| perm[k]).collect());
        let a = ctc_loss(&lg, &label).unwrap();
        let b = ctc_loss(&swapped, &relabeled).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
