//! Feature expansion by duplication and coarse coordinate reconstruction.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::AggregatedFeatures;
use crate::autograd::{Tape, Var};
use crate::error::{Result, SfaError};
use crate::nn::{Activation, Linear, Mlp, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartLabel {
    Known,
    Missing,
}

impl PartLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PartLabel::Known => "known",
            PartLabel::Missing => "missing",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    pub r: usize,
    /// Copies of `f_known`.
    pub j: usize,
    /// Copies of `f_missing`.
    pub k: usize,
    pub copy_widths: Vec<usize>,
    /// Hidden widths of the coordinate head; the last one is the carried feature width.
    pub head_widths: Vec<usize>,
}

impl ExpansionConfig {
    /// Even split `j = k = r / 2` (known part gets the extra copy when `r` is odd).
    pub fn balanced(r: usize) -> Self {
        let k = r / 2;
        ExpansionConfig {
            r,
            j: r - k,
            k,
            copy_widths: vec![128, 64],
            head_widths: vec![64],
        }
    }

    pub fn with_ratio(mut self, j: usize, k: usize) -> Self {
        self.j = j;
        self.k = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 {
            return Err(SfaError::Config("expansion factor r must be at least 1".into()));
        }
        if self.j + self.k != self.r {
            return Err(SfaError::Config(format!(
                "ratio j:k = {}:{} must satisfy j + k = r = {}",
                self.j, self.k, self.r
            )));
        }
        if self.copy_widths.is_empty() || self.head_widths.is_empty() {
            return Err(SfaError::Config("copy and head stacks need at least one layer".into()));
        }
        Ok(())
    }

    pub fn carried_width(&self) -> usize {
        *self.head_widths.last().unwrap()
    }
}

/// Parses `j:k`. A proportion whose sum divides `r` is scaled up, so `1:1`
/// with `r = 8` gives `(4, 4)`.
pub fn parse_ratio(text: &str, r: usize) -> Result<(usize, usize)> {
    let bad = || SfaError::Config(format!("ratio {text:?} must look like j:k with nonnegative integers"));
    let (j, k) = text.split_once(':').ok_or_else(bad)?;
    let j: usize = j.trim().parse().map_err(|_| bad())?;
    let k: usize = k.trim().parse().map_err(|_| bad())?;
    let sum = j + k;
    if sum == 0 || !r.is_multiple_of(sum) {
        return Err(SfaError::Config(format!(
            "ratio {j}:{k} violates j + k = r = {r} (j + k must equal or divide r)"
        )));
    }
    Ok((j * (r / sum), k * (r / sum)))
}

/// `r` separately weighted copy stacks.
#[derive(Clone, Debug)]
pub struct Expander {
    pub cfg: ExpansionConfig,
    pub copies: Vec<Mlp>,
}

impl Expander {
    pub fn new(params: &mut ParamSet, cfg: &ExpansionConfig, input: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let copies = (0..cfg.r)
            .map(|c| Mlp::new(params, &format!("expand.copy{c}"), input, &cfg.copy_widths, Activation::Relu, rng))
            .collect();
        Ok(Expander { cfg: cfg.clone(), copies })
    }

    /// Duplicates `f_known` `j` times and `f_missing` `k` times, one stack per copy.
    /// Rows come out known copies first.
    pub fn expand(&self, tape: &mut Tape, agg: &AggregatedFeatures) -> Result<(Var, Vec<PartLabel>)> {
        self.cfg.validate()?;
        let n = tape.shape(agg.f_known).0;
        let mut outs = Vec::with_capacity(self.cfg.r);
        let mut labels = Vec::with_capacity(self.cfg.r * n);
        for (c, stack) in self.copies.iter().enumerate() {
            let (src, label) = if c < self.cfg.j {
                (agg.f_known, PartLabel::Known)
            } else {
                (agg.f_missing, PartLabel::Missing)
            };
            outs.push(stack.forward(tape, src));
            labels.extend(std::iter::repeat_n(label, n));
        }
        Ok((tape.concat_rows(&outs), labels))
    }
}

/// Shared per-point stack from expanded features to coordinates.
#[derive(Clone, Debug)]
pub struct CoordHead {
    pub hidden: Mlp,
    pub out: Linear,
}

#[derive(Clone, Debug)]
pub struct CoarseVars {
    pub y_rec: Var,
    /// Last hidden activation of the head, one row per point.
    pub carried: Var,
    pub labels: Vec<PartLabel>,
}

impl CoordHead {
    pub fn new(params: &mut ParamSet, cfg: &ExpansionConfig, rng: &mut ChaCha8Rng) -> Self {
        let input = *cfg.copy_widths.last().unwrap();
        let hidden = Mlp::new(params, "recon.hidden", input, &cfg.head_widths, Activation::Relu, rng);
        let out = Linear::new(
            params,
            "recon.coords",
            hidden.output_width(input),
            3,
            Activation::Identity,
            rng,
        );
        CoordHead { hidden, out }
    }

    pub fn reconstruct(&self, tape: &mut Tape, expanded: Var, labels: Vec<PartLabel>) -> Result<CoarseVars> {
        if tape.value(expanded).iter().any(|v| !v.is_finite()) {
            return Err(SfaError::Numeric("expanded features contain non-finite values".into()));
        }
        let carried = self.hidden.forward(tape, expanded);
        let y_rec = self.out.forward(tape, carried);
        Ok(CoarseVars { y_rec, carried, labels })
    }
}
