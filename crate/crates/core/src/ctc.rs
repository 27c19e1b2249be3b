//! Connectionist temporal classification: the collapse map, the log-domain
//! forward-backward lattice, loss and gradients, greedy best-path decoding and
//! a brute-force enumeration oracle.
//!
//! Per-frame scores are `[A × T]` log-probability tensors (symbol-major, time
//! fastest). The blank symbol is always index 0.

use std::collections::{BTreeMap, HashMap};
use std::ops::Deref;
use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{log_add, logsumexp_unchecked, Tensor};

pub const BLANK: usize = 0;
pub const BLANK_TOKEN: &str = "<blank>";

/// Output symbol inventory. Index 0 is the blank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Alphabet {
    /// `symbols` excludes the blank, which is inserted at index 0.
    pub fn new<I, T>(symbols: I) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        let mut all = vec![BLANK_TOKEN.to_string()];
        all.extend(symbols.into_iter().map(Into::into));
        Self::from_symbols(all)
    }

    fn from_symbols(symbols: Vec<String>) -> Result<Self> {
        if symbols.first().map(String::as_str) != Some(BLANK_TOKEN) {
            return Err(Error::Format(format!(
                "alphabet must start with {BLANK_TOKEN}"
            )));
        }
        if symbols.len() < 2 {
            return Err(Error::InvalidArgument(
                "alphabet needs at least one non-blank symbol".into(),
            ));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("invalid symbol {s:?} at index {i}")));
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate symbol {s:?}")));
            }
        }
        Ok(Alphabet { symbols, index })
    }

    /// One symbol per line; line 1 must be `<blank>`.
    pub fn parse(text: &str) -> Result<Self> {
        let symbols = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        Self::from_symbols(symbols)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.symbols.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Number of symbols including the blank.
    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, index: usize) -> Option<&str> {
        self.symbols.get(index).map(String::as_str)
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    /// Encodes space-separated symbols; the blank is not a legal target symbol.
    pub fn encode(&self, utterance: &str, text: &str) -> Result<LabelSequence> {
        let labels = text
            .split_whitespace()
            .map(|sym| match self.index_of(sym) {
                Some(i) if i != BLANK => Ok(i),
                _ => Err(Error::UnknownSymbol {
                    utterance: utterance.to_string(),
                    symbol: sym.to_string(),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LabelSequence(labels))
    }

    pub fn decode_to_string(&self, labels: &[usize]) -> String {
        labels
            .iter()
            .map(|&i| self.symbols[i].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Target label sequence of non-blank symbol indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    pub fn new(labels: Vec<usize>, alphabet_size: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l == BLANK || l >= alphabet_size) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [1, {})",
                alphabet_size
            )));
        }
        Ok(LabelSequence(labels))
    }

    pub fn empty() -> Self {
        LabelSequence(Vec::new())
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    /// Number of adjacent equal pairs; each forces a separating blank.
    pub fn repeat_count(&self) -> usize {
        self.0.windows(2).filter(|w| w[0] == w[1]).count()
    }

    /// Fewest frames any alignment of this target needs.
    pub fn min_frames(&self) -> usize {
        self.0.len() + self.repeat_count()
    }

    pub fn augmented(&self) -> AugmentedTarget {
        AugmentedTarget::new(self)
    }
}

impl Deref for LabelSequence {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.0
    }
}

/// Blank-interleaved target `(-, z1, -, z2, ..., zL, -)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AugmentedTarget(Vec<usize>);

impl AugmentedTarget {
    pub fn new(target: &[usize]) -> Self {
        let mut z = Vec::with_capacity(2 * target.len() + 1);
        z.push(BLANK);
        for &l in target {
            z.push(l);
            z.push(BLANK);
        }
        AugmentedTarget(z)
    }

    pub fn states(&self) -> &[usize] {
        &self.0
    }

    /// Whether state `s` may be entered directly from `s - 2`.
    #[inline]
    fn can_skip_into(&self, s: usize) -> bool {
        s >= 2 && self.0[s] != BLANK && self.0[s] != self.0[s - 2]
    }
}

/// One symbol index per frame.
pub type LatentPath = [usize];

/// σ: merge runs of equal symbols, then drop blanks.
pub fn collapse(path: &LatentPath, alphabet_size: usize) -> Result<LabelSequence> {
    if let Some(&bad) = path.iter().find(|&&o| o >= alphabet_size) {
        return Err(Error::InvalidArgument(format!(
            "path symbol {bad} outside alphabet of size {alphabet_size}"
        )));
    }
    Ok(collapse_unchecked(path))
}

fn collapse_unchecked(path: &[usize]) -> LabelSequence {
    let mut out = Vec::new();
    let mut prev = None;
    for &o in path {
        if Some(o) != prev && o != BLANK {
            out.push(o);
        }
        prev = Some(o);
    }
    LabelSequence(out)
}

/// Forward/backward tables over the augmented target, in log domain.
///
/// `alpha[s][t]` covers frames `0..=t` ending in state `s`; `beta[s][t]` covers
/// frames `t+1..T` starting from state `s` at `t`, so `alpha + beta` at any
/// frame sums to the total log-likelihood.
#[derive(Clone, Debug)]
pub struct CtcLattice<S> {
    target: AugmentedTarget,
    frames: usize,
    alpha: Vec<S>,
    beta: Vec<S>,
    log_likelihood: S,
}

impl<S: Scalar> CtcLattice<S> {
    pub fn states(&self) -> usize {
        self.target.0.len()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn alpha(&self, s: usize, t: usize) -> S {
        self.alpha[s * self.frames + t]
    }

    pub fn beta(&self, s: usize, t: usize) -> S {
        self.beta[s * self.frames + t]
    }

    pub fn log_likelihood(&self) -> S {
        self.log_likelihood
    }

    pub fn is_feasible(&self) -> bool {
        self.log_likelihood > S::neg_infinity()
    }

    pub fn target(&self) -> &AugmentedTarget {
        &self.target
    }

    /// `ln Σ_s exp(alpha[s][t] + beta[s][t])`.
    pub fn occupancy_total(&self, t: usize) -> S {
        let v: Vec<S> = (0..self.states())
            .map(|s| self.alpha(s, t) + self.beta(s, t))
            .collect();
        logsumexp_unchecked(&v)
    }
}

#[derive(Clone, Debug)]
pub struct CtcOutput<S> {
    /// `-ln Pr(Z|X)`; `+inf` when the target cannot fit in the frames.
    pub loss: S,
    pub infeasible: bool,
    pub lattice: CtcLattice<S>,
}

fn check_log_probs<S: Scalar>(log_probs: &Tensor<S>, frames: usize) -> Result<(usize, usize)> {
    if log_probs.rank() != 2 {
        return Err(shape_err!(
            "log-probabilities must be [A x T], got {:?}",
            log_probs.shape()
        ));
    }
    let (a, t) = (log_probs.dim(0), log_probs.dim(1));
    if a < 2 {
        return Err(shape_err!("alphabet of size {a} has no non-blank symbol"));
    }
    if frames == 0 || frames > t {
        return Err(shape_err!("length {frames} outside [1, {t}]"));
    }
    Ok((a, t))
}

/// CTC negative log-likelihood over all `T` frames of `log_probs`.
pub fn ctc_loss<S: Scalar>(log_probs: &Tensor<S>, target: &[usize]) -> Result<CtcOutput<S>> {
    let t = log_probs.shape().get(1).copied().unwrap_or(0);
    ctc_loss_with_length(log_probs, t, target)
}

/// CTC loss using only the first `frames` columns; trailing padding is ignored.
pub fn ctc_loss_with_length<S: Scalar>(
    log_probs: &Tensor<S>,
    frames: usize,
    target: &[usize],
) -> Result<CtcOutput<S>> {
    let (a, stride) = check_log_probs(log_probs, frames)?;
    if let Some(&bad) = target.iter().find(|&&l| l == BLANK || l >= a) {
        return Err(Error::InvalidArgument(format!(
            "target label {bad} outside [1, {a})"
        )));
    }
    let lp = log_probs.data();
    let emit = |k: usize, t: usize| lp[k * stride + t];
    let z = AugmentedTarget::new(target);
    let n = z.0.len();
    let tt = frames;
    let ninf = S::neg_infinity();

    let mut alpha = vec![ninf; n * tt];
    alpha[0] = emit(BLANK, 0);
    if n > 1 {
        alpha[tt] = emit(z.0[1], 0);
    }
    for t in 1..tt {
        for s in 0..n {
            let mut acc = alpha[s * tt + t - 1];
            if s >= 1 {
                acc = log_add(acc, alpha[(s - 1) * tt + t - 1]);
            }
            if z.can_skip_into(s) {
                acc = log_add(acc, alpha[(s - 2) * tt + t - 1]);
            }
            alpha[s * tt + t] = if acc == ninf {
                ninf
            } else {
                acc + emit(z.0[s], t)
            };
        }
    }

    let mut beta = vec![ninf; n * tt];
    beta[(n - 1) * tt + tt - 1] = S::zero();
    if n > 1 {
        beta[(n - 2) * tt + tt - 1] = S::zero();
    }
    for t in (0..tt - 1).rev() {
        for s in 0..n {
            let next = |s2: usize| beta[s2 * tt + t + 1] + emit(z.0[s2], t + 1);
            let mut acc = next(s);
            if s + 1 < n {
                acc = log_add(acc, next(s + 1));
            }
            if s + 2 < n && z.can_skip_into(s + 2) {
                acc = log_add(acc, next(s + 2));
            }
            beta[s * tt + t] = acc;
        }
    }

    let last = alpha[(n - 1) * tt + tt - 1];
    let log_likelihood = if n > 1 {
        log_add(last, alpha[(n - 2) * tt + tt - 1])
    } else {
        last
    };
    let repeats = target.windows(2).filter(|w| w[0] == w[1]).count();
    let infeasible = target.len() + repeats > tt;
    // max() drops NaN, so corrupted inputs are flagged explicitly.
    let corrupted = (0..a).any(|k| lp[k * stride..k * stride + tt].iter().any(|v| v.is_nan()));
    let log_likelihood = if corrupted { S::nan() } else { log_likelihood };
    Ok(CtcOutput {
        loss: if infeasible {
            S::infinity()
        } else {
            -log_likelihood
        },
        infeasible,
        lattice: CtcLattice {
            target: z,
            frames: tt,
            alpha,
            beta,
            log_likelihood,
        },
    })
}

/// Posterior state occupancy per symbol and frame: `γ_t(k)`, shaped like
/// `log_probs` (frames past the lattice length are zero).
fn posteriors<S: Scalar>(lattice: &CtcLattice<S>, shape: &[usize]) -> Result<Vec<S>> {
    if !lattice.is_feasible() {
        return Err(Error::InfeasibleLength {
            label_len: (lattice.states() - 1) / 2,
            frames: lattice.frames,
        });
    }
    let (a, stride) = (shape[0], shape[1]);
    let mut gamma = vec![S::zero(); a * stride];
    let ll = lattice.log_likelihood;
    for t in 0..lattice.frames {
        for (s, &k) in lattice.target.0.iter().enumerate() {
            let v = lattice.alpha(s, t) + lattice.beta(s, t);
            if v > S::neg_infinity() {
                gamma[k * stride + t] += (v - ll).exp();
            }
        }
    }
    Ok(gamma)
}

/// Gradient of the loss with respect to the log-probabilities themselves,
/// treating each entry as a free variable: `-γ_t(k)`.
pub fn ctc_grad_log_probs<S: Scalar>(
    lattice: &CtcLattice<S>,
    log_probs: &Tensor<S>,
) -> Result<Tensor<S>> {
    check_lattice_shape(lattice, log_probs)?;
    let mut g = posteriors(lattice, log_probs.shape())?;
    g.iter_mut().for_each(|v| *v = -*v);
    Tensor::new(log_probs.shape().to_vec(), g)
}

/// Gradient of the loss with respect to the pre-softmax logits:
/// `softmax(logits) - γ`. Columns past the lattice length are zero.
pub fn ctc_grad<S: Scalar>(lattice: &CtcLattice<S>, log_probs: &Tensor<S>) -> Result<Tensor<S>> {
    check_lattice_shape(lattice, log_probs)?;
    let mut g = posteriors(lattice, log_probs.shape())?;
    let (a, stride) = (log_probs.dim(0), log_probs.dim(1));
    let lp = log_probs.data();
    for k in 0..a {
        for t in 0..lattice.frames {
            let i = k * stride + t;
            g[i] = lp[i].exp() - g[i];
        }
    }
    Tensor::new(log_probs.shape().to_vec(), g)
}

fn check_lattice_shape<S: Scalar>(lattice: &CtcLattice<S>, log_probs: &Tensor<S>) -> Result<()> {
    check_log_probs(log_probs, lattice.frames)?;
    if let Some(&k) = lattice.target.0.iter().max() {
        if k >= log_probs.dim(0) {
            return Err(shape_err!("lattice symbol {k} outside log-probabilities"));
        }
    }
    Ok(())
}

/// Per-frame argmax (ties go to the lowest index), then collapse.
pub fn best_path_decode<S: Scalar>(log_probs: &Tensor<S>) -> Result<LabelSequence> {
    let t = log_probs.shape().get(1).copied().unwrap_or(0);
    best_path_decode_with_length(log_probs, t)
}

pub fn best_path_decode_with_length<S: Scalar>(
    log_probs: &Tensor<S>,
    frames: usize,
) -> Result<LabelSequence> {
    let (a, stride) = check_log_probs(log_probs, frames)?;
    let lp = log_probs.data();
    let path: Vec<usize> = (0..frames)
        .map(|t| {
            let mut best = 0;
            for k in 1..a {
                if lp[k * stride + t] > lp[best * stride + t] {
                    best = k;
                }
            }
            best
        })
        .collect();
    Ok(collapse_unchecked(&path))
}

pub const ORACLE_PATH_LIMIT: u64 = 1_000_000;

fn for_each_path(a: usize, t: usize, mut f: impl FnMut(&[usize])) -> Result<()> {
    let total = (a as u64).checked_pow(t as u32).unwrap_or(u64::MAX);
    if total > ORACLE_PATH_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "{a}^{t} paths exceeds the enumeration limit of {ORACLE_PATH_LIMIT}"
        )));
    }
    let mut path = vec![0usize; t];
    loop {
        f(&path);
        let mut i = t;
        loop {
            if i == 0 {
                return Ok(());
            }
            i -= 1;
            path[i] += 1;
            if path[i] < a {
                break;
            }
            path[i] = 0;
        }
    }
}

fn path_probability<S: Scalar>(log_probs: &Tensor<S>, path: &[usize]) -> f64 {
    let t = log_probs.dim(1);
    let lp = log_probs.data();
    path.iter()
        .enumerate()
        .map(|(i, &k)| lp[k * t + i].as_f64())
        .sum::<f64>()
        .exp()
}

/// `Pr(Z|X)` by summing every length-`T` path that collapses to `target`.
pub fn enumerate_oracle<S: Scalar>(log_probs: &Tensor<S>, target: &[usize]) -> Result<f64> {
    let (a, t) = check_log_probs(log_probs, log_probs.shape().get(1).copied().unwrap_or(0))?;
    let mut total = 0.0;
    for_each_path(a, t, |path| {
        if collapse_unchecked(path).0 == target {
            total += path_probability(log_probs, path);
        }
    })?;
    Ok(total)
}

/// Probability of every reachable label sequence, by enumeration.
pub fn enumerate_distribution<S: Scalar>(
    log_probs: &Tensor<S>,
) -> Result<BTreeMap<LabelSequence, f64>> {
    let (a, t) = check_log_probs(log_probs, log_probs.shape().get(1).copied().unwrap_or(0))?;
    let mut dist = BTreeMap::new();
    for_each_path(a, t, |path| {
        *dist.entry(collapse_unchecked(path)).or_insert(0.0) += path_probability(log_probs, path);
    })?;
    Ok(dist)
}
