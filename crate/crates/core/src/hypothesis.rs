//! Hypothesis matrices and their Kronecker-structured projectors.
//!
//! A null hypothesis `Hμ = 0` on the stacked mean vector `μ = (μ₁ᵀ, …, μ_aᵀ)ᵀ`
//! is equivalently written `Tμ = 0` with the orthogonal projector
//! `T = Hᵀ(HHᵀ)⁺H`. For `H = H_W ⊗ H_S` the projector factorizes as
//! `T = T_W ⊗ T_S`, so every formula downstream works with the
//! whole-plot block `T_W` (a×a) and the sub-plot block `T_S` (d×d).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

/// Symmetry tolerance for projector blocks.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;
/// Idempotence tolerance for projector blocks.
pub const IDEMPOTENCE_TOLERANCE: f64 = 1e-8;
/// Largest `a·d` for which the full `T = T_W ⊗ T_S` may be formed.
pub const DEFAULT_MATERIALIZATION_CAP: usize = 4096;

/// A dense hypothesis (contrast) matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastMatrix(DMatrix<f64>);

impl ContrastMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::InvalidDimension(
                "contrast matrix needs at least one row and one column".into(),
            ));
        }
        if !linalg::all_finite(&entries) {
            return Err(Error::InvalidInput("contrast matrix has non-finite entries".into()));
        }
        Ok(Self(entries))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

/// Whole-plot and sub-plot projectors `(T_W, T_S)` with `T = T_W ⊗ T_S`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPair {
    t_whole: DMatrix<f64>,
    t_sub: DMatrix<f64>,
}

impl ProjectionPair {
    /// Validates both blocks as symmetric idempotent matrices.
    pub fn new(t_whole: DMatrix<f64>, t_sub: DMatrix<f64>) -> Result<Self> {
        for (name, m) in [("T_W", &t_whole), ("T_S", &t_sub)] {
            if m.nrows() == 0 || m.nrows() != m.ncols() {
                return Err(Error::InvalidDimension(format!("{name} must be square and non-empty")));
            }
            if !linalg::all_finite(m) {
                return Err(Error::InvalidInput(format!("{name} has non-finite entries")));
            }
            let asym = linalg::max_asymmetry(m);
            if asym > SYMMETRY_TOLERANCE {
                return Err(Error::InvalidInput(format!("{name} is not symmetric (defect {asym:e})")));
            }
            let idem = linalg::idempotence_defect(m);
            if idem > IDEMPOTENCE_TOLERANCE {
                return Err(Error::InvalidInput(format!("{name} is not idempotent (defect {idem:e})")));
            }
        }
        Ok(Self { t_whole, t_sub })
    }

    pub fn t_whole(&self) -> &DMatrix<f64> {
        &self.t_whole
    }

    pub fn t_sub(&self) -> &DMatrix<f64> {
        &self.t_sub
    }

    /// Number of groups `a`.
    pub fn groups(&self) -> usize {
        self.t_whole.nrows()
    }

    /// Repeated-measures dimension `d`.
    pub fn dim(&self) -> usize {
        self.t_sub.nrows()
    }

    /// `tr(T) = tr(T_W)·tr(T_S)`, the rank of the full projector.
    pub fn rank(&self) -> f64 {
        self.t_whole.trace() * self.t_sub.trace()
    }

    /// Forms `T_W ⊗ T_S` if `a·d` does not exceed `cap`.
    pub fn materialize(&self, cap: usize) -> Result<DMatrix<f64>> {
        let rows = self.groups() * self.dim();
        if rows > cap {
            return Err(Error::MaterializationCap { rows, cap });
        }
        Ok(linalg::kron(&self.t_whole, &self.t_sub))
    }
}

fn check_order(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidDimension("matrix order must be at least 1".into()));
    }
    Ok(())
}

/// `P_k = I_k - J_k / k`.
pub fn centering_matrix(k: usize) -> Result<DMatrix<f64>> {
    check_order(k)?;
    let inv = 1.0 / k as f64;
    Ok(DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 - inv } else { -inv }))
}

/// `J_k / k`.
pub fn averaging_matrix(k: usize) -> Result<DMatrix<f64>> {
    check_order(k)?;
    Ok(DMatrix::from_element(k, k, 1.0 / k as f64))
}

/// `e_ℓ e_ℓᵀ` for a 1-based index `ℓ`.
pub fn unit_projector(k: usize, index: usize) -> Result<DMatrix<f64>> {
    check_order(k)?;
    if index == 0 || index > k {
        return Err(Error::IndexOutOfRange(format!("index {index} not in 1..={k}")));
    }
    let mut m = DMatrix::zeros(k, k);
    m[(index - 1, index - 1)] = 1.0;
    Ok(m)
}

/// `T = Hᵀ(HHᵀ)⁺H`, symmetrized.
pub fn projector_from_hypothesis(h: &ContrastMatrix) -> DMatrix<f64> {
    let h = h.matrix();
    let gram = h * h.transpose();
    let t = h.transpose() * linalg::pinv_symmetric(&gram) * h;
    linalg::symmetrize(&t)
}

/// Projectors for `H = H_W ⊗ H_S`, computed block by block.
pub fn kron_pair_projector(h_whole: &ContrastMatrix, h_sub: &ContrastMatrix) -> Result<ProjectionPair> {
    if h_whole.cols() == 0 || h_sub.cols() == 0 {
        return Err(Error::InvalidDimension("empty hypothesis block".into()));
    }
    ProjectionPair::new(projector_from_hypothesis(h_whole), projector_from_hypothesis(h_sub))
}

/// Layout of the repeated measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubplotStructure {
    /// `d` unstructured repeated measures.
    Flat(usize),
    /// `outer × inner` crossed factors, outer slowest (e.g. 4 interventions × 6 times).
    Factorial { outer: usize, inner: usize },
}

impl SubplotStructure {
    pub fn dim(&self) -> usize {
        match *self {
            SubplotStructure::Flat(d) => d,
            SubplotStructure::Factorial { outer, inner } => outer * inner,
        }
    }
}

/// The canonical hypotheses of a split-plot analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HypothesisKind {
    /// No whole-plot (group) effect: `(P_a, J_d/d)`.
    Group,
    /// No sub-plot (time) effect: `(J_a/a, P_d)`.
    Time,
    /// No group × time interaction: `(P_a, P_d)`.
    Interaction,
    /// No inner-factor effect within outer level `ℓ` (1-based): `(P_a, e_ℓe_ℓᵀ ⊗ P_s)`.
    TimeWithin(usize),
    /// No difference between outer levels `ℓ` and `k`:
    /// `(P_a, proj((e_ℓe_ℓᵀ − e_ℓe_kᵀ) ⊗ J_s/s))`.
    BetweenInterventions(usize, usize),
}

impl HypothesisKind {
    /// Short label, e.g. `group`, `time_within:2`, `between:1:3`.
    pub fn label(&self) -> String {
        match *self {
            HypothesisKind::Group => "group".into(),
            HypothesisKind::Time => "time".into(),
            HypothesisKind::Interaction => "interaction".into(),
            HypothesisKind::TimeWithin(l) => format!("time_within:{l}"),
            HypothesisKind::BetweenInterventions(l, k) => format!("between:{l}:{k}"),
        }
    }

    /// Parses the labels produced by [`HypothesisKind::label`].
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.trim().split(':').collect();
        let index = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad level index '{s}' in hypothesis '{text}'")))
        };
        match parts.as_slice() {
            ["group"] | ["a"] => Ok(HypothesisKind::Group),
            ["time"] | ["b"] => Ok(HypothesisKind::Time),
            ["interaction"] | ["ab"] => Ok(HypothesisKind::Interaction),
            ["time_within", l] => Ok(HypothesisKind::TimeWithin(index(l)?)),
            ["between", l, k] => Ok(HypothesisKind::BetweenInterventions(index(l)?, index(k)?)),
            _ => Err(Error::Parse(format!("unknown hypothesis '{text}'"))),
        }
    }
}

/// Builds the projector pair of a canonical hypothesis.
pub fn standard_hypothesis(
    kind: HypothesisKind,
    a: usize,
    structure: SubplotStructure,
) -> Result<ProjectionPair> {
    let d = structure.dim();
    check_order(a)?;
    check_order(d)?;
    let needs_contrast = !matches!(kind, HypothesisKind::Time);
    if needs_contrast && a < 2 {
        return Err(Error::InvalidDimension(format!(
            "hypothesis '{}' needs at least two groups",
            kind.label()
        )));
    }
    let factorial = || match structure {
        SubplotStructure::Factorial { outer, inner } => Ok((outer, inner)),
        SubplotStructure::Flat(_) => Err(Error::DimensionMismatch(format!(
            "hypothesis '{}' needs a factorial sub-plot structure",
            kind.label()
        ))),
    };
    match kind {
        HypothesisKind::Group => ProjectionPair::new(centering_matrix(a)?, averaging_matrix(d)?),
        HypothesisKind::Time => ProjectionPair::new(averaging_matrix(a)?, centering_matrix(d)?),
        HypothesisKind::Interaction => ProjectionPair::new(centering_matrix(a)?, centering_matrix(d)?),
        HypothesisKind::TimeWithin(l) => {
            let (outer, inner) = factorial()?;
            let h_sub = linalg::kron(&unit_projector(outer, l)?, &centering_matrix(inner)?);
            let t_sub = projector_from_hypothesis(&ContrastMatrix::new(h_sub)?);
            ProjectionPair::new(centering_matrix(a)?, t_sub)
        }
        HypothesisKind::BetweenInterventions(l, k) => {
            let (outer, inner) = factorial()?;
            if l == k {
                return Err(Error::IndexOutOfRange(format!(
                    "levels to compare must differ (got {l} and {k})"
                )));
            }
            let mut block = unit_projector(outer, l)?;
            if k == 0 || k > outer {
                return Err(Error::IndexOutOfRange(format!("index {k} not in 1..={outer}")));
            }
            block[(l - 1, k - 1)] -= 1.0;
            let h_sub = linalg::kron(&block, &averaging_matrix(inner)?);
            let t_sub = projector_from_hypothesis(&ContrastMatrix::new(h_sub)?);
            ProjectionPair::new(centering_matrix(a)?, t_sub)
        }
    }
}

/// The thirteen hypotheses of a two-factor sub-plot analysis with `outer` levels:
/// group, time, interaction, one `time_within` per level and one `between`
/// per unordered pair of levels.
pub fn factorial_hypothesis_family(outer: usize) -> Vec<HypothesisKind> {
    let mut kinds = vec![HypothesisKind::Group, HypothesisKind::Time, HypothesisKind::Interaction];
    kinds.extend((1..=outer).map(HypothesisKind::TimeWithin));
    for l in 1..=outer {
        for k in (l + 1)..=outer {
            kinds.push(HypothesisKind::BetweenInterventions(l, k));
        }
    }
    kinds
}

/// Two-way decomposition `μ_{it} = μ + α_i + β_t + (αβ)_{it}` under sum-to-zero constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectDecomposition {
    pub grand_mean: f64,
    pub group_effects: Vec<f64>,
    pub time_effects: Vec<f64>,
    pub interactions: DMatrix<f64>,
}

impl EffectDecomposition {
    /// Rebuilds the `a×d` mean matrix.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.group_effects.len(), self.time_effects.len(), |i, t| {
            self.grand_mean + self.group_effects[i] + self.time_effects[t] + self.interactions[(i, t)]
        })
    }
}

pub fn decompose_effects(mu: &DMatrix<f64>) -> Result<EffectDecomposition> {
    if mu.nrows() == 0 || mu.ncols() == 0 {
        return Err(Error::InvalidDimension("empty mean matrix".into()));
    }
    if !linalg::all_finite(mu) {
        return Err(Error::InvalidInput("mean matrix has non-finite entries".into()));
    }
    let (a, d) = mu.shape();
    let grand_mean = mu.mean();
    let group_effects: Vec<f64> = (0..a).map(|i| mu.row(i).mean() - grand_mean).collect();
    let time_effects: Vec<f64> = (0..d).map(|t| mu.column(t).mean() - grand_mean).collect();
    let interactions = DMatrix::from_fn(a, d, |i, t| {
        mu[(i, t)] - grand_mean - group_effects[i] - time_effects[t]
    });
    Ok(EffectDecomposition { grand_mean, group_effects, time_effects, interactions })
}
