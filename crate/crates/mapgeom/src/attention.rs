//! Masked self-attention with geometry-decoupled masks — a small, exactly
//! checkable reference, not a trainable network.
//!
//! Tokens are point queries: `num_instances * points_per_instance` of them,
//! laid out instance-major, so token `t` belongs to instance
//! `t / points_per_instance`. Two complementary binary masks partition the
//! attention structure:
//!
//! * the **shape mask** lets a token attend only within its own instance
//!   (every row has exactly `points_per_instance` ones),
//! * the **relation mask** is its complement: only *other* instances' tokens
//!   (every row has `num_tokens - points_per_instance` ones).
//!
//! Restricting attention this way separates intra-instance geometry from
//! inter-instance interaction; the [`gda_block`] runs one masked pass with
//! each mask, with residual connections and no normalization layers, so every
//! number is reproducible.
//!
//! Masking semantics: by default a masked position is *excluded* — the
//! softmax runs over the allowed set only, which is equivalent to adding
//! negative infinity to masked logits. The alternative
//! [`MaskSemantics::MultiplyLogits`] multiplies logits by the 0/1 mask before
//! a full softmax, which leaves masked positions competing with weight
//! `exp(0)`; it is provided because the two readings genuinely differ and the
//! difference should be demonstrable, not guessed at.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

/// Instance-major token layout: tokens of one instance are contiguous.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenLayout {
    pub num_instances: usize,
    pub points_per_instance: usize,
}

impl TokenLayout {
    pub fn new(num_instances: usize, points_per_instance: usize) -> Result<Self> {
        if num_instances == 0 || points_per_instance == 0 {
            return Err(Error::InvalidConfig(
                "token layout dimensions must be positive".into(),
            ));
        }
        Ok(Self {
            num_instances,
            points_per_instance,
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.num_instances * self.points_per_instance
    }

    /// Instance owning `token`. Errors if the token is out of range.
    pub fn instance_index(&self, token: usize) -> Result<usize> {
        if token >= self.num_tokens() {
            return Err(Error::IndexOutOfBounds {
                what: "token".into(),
                index: token,
                len: self.num_tokens(),
            });
        }
        Ok(token / self.points_per_instance)
    }
}

/// Binary attention mask over `num_tokens x num_tokens`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    allowed: Array2<bool>,
}

impl AttentionMask {
    /// Same-instance mask: token `i` may attend to token `j` iff they belong
    /// to the same instance.
    pub fn shape_mask(layout: TokenLayout) -> Self {
        let n = layout.num_tokens();
        let allowed = Array2::from_shape_fn((n, n), |(i, j)| {
            i / layout.points_per_instance == j / layout.points_per_instance
        });
        Self { allowed }
    }

    /// Cross-instance mask: the exact complement of [`AttentionMask::shape_mask`].
    pub fn relation_mask(layout: TokenLayout) -> Self {
        let n = layout.num_tokens();
        let allowed = Array2::from_shape_fn((n, n), |(i, j)| {
            i / layout.points_per_instance != j / layout.points_per_instance
        });
        Self { allowed }
    }

    /// All-ones mask (plain attention).
    pub fn full(num_tokens: usize) -> Self {
        Self {
            allowed: Array2::from_elem((num_tokens, num_tokens), true),
        }
    }

    pub fn num_tokens(&self) -> usize {
        self.allowed.nrows()
    }

    pub fn is_allowed(&self, row: usize, col: usize) -> bool {
        self.allowed[(row, col)]
    }

    pub fn row_count(&self, row: usize) -> usize {
        self.allowed.row(row).iter().filter(|&&a| a).count()
    }

    /// The elementwise complement.
    pub fn complement(&self) -> Self {
        Self {
            allowed: self.allowed.mapv(|a| !a),
        }
    }
}

/// Projection matrices of one attention pass; all `embed_dim x head_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    pub wq: Array2<T>,
    pub wk: Array2<T>,
    pub wv: Array2<T>,
}

impl<T: Scalar> AttentionParams<T> {
    pub fn new(wq: Array2<T>, wk: Array2<T>, wv: Array2<T>) -> Result<Self> {
        if wq.dim() != wk.dim() || wq.dim() != wv.dim() {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "projection shapes {:?}, {:?}, {:?}",
                    wq.dim(),
                    wk.dim(),
                    wv.dim()
                ),
            });
        }
        for (name, m) in [("wq", &wq), ("wk", &wk), ("wv", &wv)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("attention parameter {name}"),
                });
            }
        }
        Ok(Self { wq, wk, wv })
    }

    /// All-zero projections (useful for isolating structural behavior).
    pub fn zeros(embed_dim: usize, head_dim: usize) -> Self {
        Self {
            wq: Array2::zeros((embed_dim, head_dim)),
            wk: Array2::zeros((embed_dim, head_dim)),
            wv: Array2::zeros((embed_dim, head_dim)),
        }
    }

    /// Deterministic pseudo-random projections in `[-0.5, 0.5]` from a seed.
    pub fn seeded(embed_dim: usize, head_dim: usize, seed: u64) -> Self {
        use rand_core::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let mut fill = |_: ()| -> Array2<T> {
            Array2::from_shape_fn((embed_dim, head_dim), |_| {
                cast::<T>((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5)
            })
        };
        let wq = fill(());
        let wk = fill(());
        let wv = fill(());
        Self { wq, wk, wv }
    }

    pub fn embed_dim(&self) -> usize {
        self.wq.nrows()
    }

    pub fn head_dim(&self) -> usize {
        self.wq.ncols()
    }
}

/// How masked positions are treated; see the module docs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MaskSemantics {
    /// Masked positions are removed from the softmax support (additive -inf).
    #[default]
    Exclude,
    /// Logits are multiplied by the 0/1 mask, then a full softmax runs.
    MultiplyLogits,
}

/// Options for a masked attention pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionOptions {
    pub semantics: MaskSemantics,
    /// Number of heads; must divide the head dimension. Head `h` uses its
    /// contiguous column slice of the projections.
    pub heads: usize,
}

impl Default for AttentionOptions {
    fn default() -> Self {
        Self {
            semantics: MaskSemantics::Exclude,
            heads: 1,
        }
    }
}

/// Result of a masked attention pass.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput<T> {
    /// `num_tokens x head_dim` attended values.
    pub tokens: Array2<T>,
    /// Rows whose mask admits no position at all; those output rows are zero.
    pub empty_rows: Vec<usize>,
}

/// One masked scaled-dot-product self-attention pass.
///
/// `tokens` is `num_tokens x embed_dim`. Rows of the output are convex
/// combinations of projected values over each row's allowed set; with
/// [`MaskSemantics::Exclude`] the attention weights of a row sum to 1 unless
/// the row is empty, in which case the row is zero and reported in
/// `empty_rows`. Summation order is fixed (ascending column), so outputs are
/// bit-reproducible and a row is bit-identical whenever its allowed inputs
/// are.
pub fn masked_self_attention<T: Scalar>(
    tokens: &Array2<T>,
    mask: &AttentionMask,
    params: &AttentionParams<T>,
    options: AttentionOptions,
) -> Result<AttentionOutput<T>> {
    let n = tokens.nrows();
    if mask.num_tokens() != n {
        return Err(Error::DimensionMismatch {
            context: format!(
                "{} tokens vs {}x{} mask",
                n,
                mask.num_tokens(),
                mask.num_tokens()
            ),
        });
    }
    if tokens.ncols() != params.embed_dim() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "embed dim {} vs projections {}",
                tokens.ncols(),
                params.embed_dim()
            ),
        });
    }
    if tokens.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "attention input tokens".into(),
        });
    }
    let head_dim = params.head_dim();
    if options.heads == 0 || !head_dim.is_multiple_of(options.heads) {
        return Err(Error::InvalidConfig(format!(
            "{} heads do not divide head dim {head_dim}",
            options.heads
        )));
    }

    let q = matmul(tokens, &params.wq);
    let k = matmul(tokens, &params.wk);
    let v = matmul(tokens, &params.wv);
    let slice = head_dim / options.heads;
    let inv_sqrt = T::one() / cast::<T>(slice as f64).sqrt();

    let mut out = Array2::zeros((n, head_dim));
    let mut empty_rows = Vec::new();
    let mut logits = vec![T::zero(); n];
    for h in 0..options.heads {
        let cols = h * slice..(h + 1) * slice;
        for i in 0..n {
            // Logits for row i, this head.
            for j in 0..n {
                let mut dot = T::zero();
                for c in cols.clone() {
                    dot += q[(i, c)] * k[(j, c)];
                }
                logits[j] = dot * inv_sqrt;
            }
            match options.semantics {
                MaskSemantics::Exclude => {
                    let mut max = T::neg_infinity();
                    for (j, &logit) in logits.iter().enumerate() {
                        if mask.is_allowed(i, j) && logit > max {
                            max = logit;
                        }
                    }
                    if max == T::neg_infinity() {
                        if h == 0 {
                            empty_rows.push(i);
                        }
                        continue; // row stays zero
                    }
                    let mut denom = T::zero();
                    for (j, &logit) in logits.iter().enumerate() {
                        if mask.is_allowed(i, j) {
                            denom += (logit - max).exp();
                        }
                    }
                    for (j, &logit) in logits.iter().enumerate() {
                        if mask.is_allowed(i, j) {
                            let wgt = (logit - max).exp() / denom;
                            for c in cols.clone() {
                                out[(i, c)] += wgt * v[(j, c)];
                            }
                        }
                    }
                }
                MaskSemantics::MultiplyLogits => {
                    let mut max = T::neg_infinity();
                    for (j, &logit) in logits.iter().enumerate() {
                        let l = if mask.is_allowed(i, j) {
                            logit
                        } else {
                            T::zero()
                        };
                        if l > max {
                            max = l;
                        }
                    }
                    let mut denom = T::zero();
                    for (j, &logit) in logits.iter().enumerate() {
                        let l = if mask.is_allowed(i, j) {
                            logit
                        } else {
                            T::zero()
                        };
                        denom += (l - max).exp();
                    }
                    for (j, &logit) in logits.iter().enumerate() {
                        let l = if mask.is_allowed(i, j) {
                            logit
                        } else {
                            T::zero()
                        };
                        let wgt = (l - max).exp() / denom;
                        for c in cols.clone() {
                            out[(i, c)] += wgt * v[(j, c)];
                        }
                    }
                }
            }
        }
    }
    Ok(AttentionOutput {
        tokens: out,
        empty_rows,
    })
}

/// Plain row-major matrix product with a fixed summation order.
fn matmul<T: Scalar>(a: &Array2<T>, b: &Array2<T>) -> Array2<T> {
    let (n, k) = a.dim();
    let (_, m) = b.dim();
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            let mut acc = T::zero();
            for t in 0..k {
                acc += a[(i, t)] * b[(t, j)];
            }
            out[(i, j)] = acc;
        }
    }
    out
}

/// Output of a geometry-decoupled attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct GdaOutput<T> {
    pub tokens: Array2<T>,
    pub shape_empty_rows: Vec<usize>,
    pub relation_empty_rows: Vec<usize>,
}

/// Geometry-decoupled attention block: shape-masked attention with a residual
/// connection, then relation-masked attention with a residual connection. No
/// normalization or feed-forward layers. Projections must be square
/// (`embed_dim == head_dim`) so the residual additions type-check
/// dimensionally.
///
/// With a single instance the relation mask is empty; every relation row is
/// reported in `relation_empty_rows` and the second stage passes its input
/// through unchanged.
pub fn gda_block<T: Scalar>(
    tokens: &Array2<T>,
    layout: TokenLayout,
    shape_params: &AttentionParams<T>,
    relation_params: &AttentionParams<T>,
    options: AttentionOptions,
) -> Result<GdaOutput<T>> {
    if tokens.nrows() != layout.num_tokens() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "{} tokens vs layout {}",
                tokens.nrows(),
                layout.num_tokens()
            ),
        });
    }
    for (name, p) in [("shape", shape_params), ("relation", relation_params)] {
        if p.embed_dim() != p.head_dim() {
            return Err(Error::DimensionMismatch {
                context: format!("{name} projections must be square for residual addition"),
            });
        }
    }
    let shape_mask = AttentionMask::shape_mask(layout);
    let relation_mask = AttentionMask::relation_mask(layout);

    let first = masked_self_attention(tokens, &shape_mask, shape_params, options)?;
    let x1 = tokens + &first.tokens;
    let second = masked_self_attention(&x1, &relation_mask, relation_params, options)?;
    let x2 = &x1 + &second.tokens;
    Ok(GdaOutput {
        tokens: x2,
        shape_empty_rows: first.empty_rows,
        relation_empty_rows: second.empty_rows,
    })
}
