//! Self-testing of Σ c_i |ii⟩ for d = 3, 4 in the [{3,d},{4,d}] scenario.
//!
//! The indices are covered twice by 2x2 blocks (pairings P1 and P2). Each
//! block, seen through block-diagonal measurements, is a two-qubit tilted-CHSH
//! problem: it yields the ratio c_j/c_i, and its probability mass yields
//! c_i² + c_j². P1 settings are Alice (0, 1) and Bob (0, 1); P2 settings are
//! Alice (0, 2) and Bob (2, 3).

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_4};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::bell::{BellScenario, CorrelationTable, ObservableSet, ProjectiveMeasurement, SettingsPair, Source};
use crate::error::{Error, Result};
use crate::qcore::{fidelity_to_pure, DensityMatrix, SchmidtState};
use crate::tiltedchsh::{extract_theta_oriented, ExtractionResult};

/// Block mass below which a block counts as empty.
pub const EMPTY_BLOCK_WEIGHT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairingId {
    P1,
    P2,
}

impl PairingId {
    /// Alice's and Bob's setting indices used by this pairing.
    pub fn settings(self) -> ((usize, usize), (usize, usize)) {
        match self {
            PairingId::P1 => ((0, 1), (0, 1)),
            PairingId::P2 => ((0, 2), (2, 3)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    /// (lower, higher) index pair.
    Pair(usize, usize),
    Single(usize),
}

impl Block {
    pub fn pair(i: usize, j: usize) -> Self {
        Block::Pair(i.min(j), i.max(j))
    }

    pub fn indices(&self) -> Vec<usize> {
        match *self {
            Block::Pair(i, j) => vec![i, j],
            Block::Single(k) => vec![k],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPairing {
    pub id: PairingId,
    pub blocks: Vec<Block>,
}

impl BlockPairing {
    fn validate(&self, d: usize) -> Result<()> {
        let mut seen = vec![false; d];
        for block in &self.blocks {
            if let Block::Pair(i, j) = block {
                if i == j {
                    return Err(Error::InvalidMeasurement(format!("block ({i},{j}) repeats an index")));
                }
            }
            for k in block.indices() {
                if k >= d || seen[k] {
                    return Err(Error::InvalidMeasurement(format!(
                        "pairing {:?} does not partition 0..{d}",
                        self.id
                    )));
                }
                seen[k] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidMeasurement(format!(
                "pairing {:?} does not cover 0..{d}",
                self.id
            )));
        }
        Ok(())
    }
}

/// Both pairings for one local dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuditLayout {
    pub d: usize,
    pub p1: BlockPairing,
    pub p2: BlockPairing,
}

impl QuditLayout {
    /// d = 4: P1 = {(0,1),(2,3)}, P2 = {(1,2),(0,3)};
    /// d = 3: P1 = {(0,1),(2)}, P2 = {(1,2),(0)}.
    pub fn standard(d: usize) -> Result<Self> {
        let (p1, p2) = match d {
            3 => (
                vec![Block::pair(0, 1), Block::Single(2)],
                vec![Block::pair(1, 2), Block::Single(0)],
            ),
            4 => (
                vec![Block::pair(0, 1), Block::pair(2, 3)],
                vec![Block::pair(1, 2), Block::pair(0, 3)],
            ),
            _ => {
                return Err(Error::OutOfRange(format!("qudit dimension {d} not in {{3, 4}}")));
            }
        };
        Self::new(
            d,
            BlockPairing {
                id: PairingId::P1,
                blocks: p1,
            },
            BlockPairing {
                id: PairingId::P2,
                blocks: p2,
            },
        )
    }

    pub fn new(d: usize, p1: BlockPairing, p2: BlockPairing) -> Result<Self> {
        p1.validate(d)?;
        p2.validate(d)?;
        Ok(Self { d, p1, p2 })
    }

    /// Relabels every index `k` as `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let map = |p: &BlockPairing| BlockPairing {
            id: p.id,
            blocks: p
                .blocks
                .iter()
                .map(|b| match *b {
                    Block::Pair(i, j) => Block::pair(perm[i], perm[j]),
                    Block::Single(k) => Block::Single(perm[k]),
                })
                .collect(),
        };
        if perm.len() != self.d {
            return Err(Error::DimensionMismatch("permutation length differs from d".into()));
        }
        Self::new(self.d, map(&self.p1), map(&self.p2))
    }

    pub fn pairings(&self) -> [&BlockPairing; 2] {
        [&self.p1, &self.p2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuditSettings {
    pub settings: SettingsPair,
    /// Blocks whose two coefficients are both zero (tilt undefined; μ = π/4 used).
    pub degenerate_blocks: Vec<Block>,
}

fn basis_vec(d: usize, entries: &[(usize, f64)]) -> Vec<C64> {
    let mut v = vec![C64::new(0.0, 0.0); d];
    for &(k, x) in entries {
        v[k] = C64::new(x, 0.0);
    }
    v
}

/// Alice's σ_x-type measurement on a pairing: (|i⟩ ± |j⟩)/√2 labeled i / j,
/// |k⟩ labeled k on singletons.
fn alice_block_measurement(d: usize, pairing: &BlockPairing) -> Result<ProjectiveMeasurement> {
    let mut vectors = vec![Vec::new(); d];
    for block in &pairing.blocks {
        match *block {
            Block::Pair(i, j) => {
                vectors[i] = basis_vec(d, &[(i, FRAC_1_SQRT_2), (j, FRAC_1_SQRT_2)]);
                vectors[j] = basis_vec(d, &[(i, FRAC_1_SQRT_2), (j, -FRAC_1_SQRT_2)]);
            }
            Block::Single(k) => vectors[k] = basis_vec(d, &[(k, 1.0)]),
        }
    }
    ProjectiveMeasurement::from_basis(&vectors)
}

/// Bob's tilted measurements cos μ_B Z ± sin μ_B X inside every block of a pairing.
fn bob_block_measurements(
    d: usize,
    pairing: &BlockPairing,
    coeffs: &[f64],
    degenerate: &mut Vec<Block>,
) -> Result<(ProjectiveMeasurement, ProjectiveMeasurement)> {
    let mut plus = vec![Vec::new(); d];
    let mut minus = vec![Vec::new(); d];
    for block in &pairing.blocks {
        match *block {
            Block::Pair(i, j) => {
                let mu = if coeffs[i] == 0.0 && coeffs[j] == 0.0 {
                    degenerate.push(*block);
                    FRAC_PI_4
                } else {
                    let theta = coeffs[j].atan2(coeffs[i]);
                    (2.0 * theta).sin().atan()
                };
                let (c, s) = ((mu / 2.0).cos(), (mu / 2.0).sin());
                // eigenvectors of cos μ Z + sin μ X: +1 → i, −1 → j
                plus[i] = basis_vec(d, &[(i, c), (j, s)]);
                plus[j] = basis_vec(d, &[(i, -s), (j, c)]);
                // cos μ Z − sin μ X
                minus[i] = basis_vec(d, &[(i, c), (j, -s)]);
                minus[j] = basis_vec(d, &[(i, s), (j, c)]);
            }
            Block::Single(k) => {
                plus[k] = basis_vec(d, &[(k, 1.0)]);
                minus[k] = basis_vec(d, &[(k, 1.0)]);
            }
        }
    }
    Ok((
        ProjectiveMeasurement::from_basis(&plus)?,
        ProjectiveMeasurement::from_basis(&minus)?,
    ))
}

/// Three Alice and four Bob settings, d outcomes each, for the standard layout.
pub fn build_qudit_settings(coeffs: &SchmidtState) -> Result<QuditSettings> {
    build_qudit_settings_with(&QuditLayout::standard(coeffs.d())?, coeffs)
}

pub fn build_qudit_settings_with(layout: &QuditLayout, coeffs: &SchmidtState) -> Result<QuditSettings> {
    let d = layout.d;
    if coeffs.d() != d {
        return Err(Error::DimensionMismatch(format!(
            "{} coefficients for d = {d}",
            coeffs.d()
        )));
    }
    let c = coeffs.coeffs();
    let mut degenerate = Vec::new();
    let alice = ObservableSet::new(vec![
        ProjectiveMeasurement::computational(d),
        alice_block_measurement(d, &layout.p1)?,
        alice_block_measurement(d, &layout.p2)?,
    ])?;
    let (b0, b1) = bob_block_measurements(d, &layout.p1, c, &mut degenerate)?;
    let (b2, b3) = bob_block_measurements(d, &layout.p2, c, &mut degenerate)?;
    let bob = ObservableSet::new(vec![b0, b1, b2, b3])?;
    Ok(QuditSettings {
        settings: SettingsPair { alice, bob },
        degenerate_blocks: degenerate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReduction {
    pub block: Block,
    /// Block mass W_B, pooled over the four setting pairs.
    pub weight: f64,
    /// max − min of the per-setting block mass.
    pub weight_spread: f64,
    /// Conditional two-qubit table (outcomes i → 0, j → 1); `None` for
    /// singletons and empty blocks.
    pub table: Option<CorrelationTable>,
}

/// Restricts a qudit table to one block under the given setting pairs.
pub fn block_reduce(
    table: &CorrelationTable,
    block: Block,
    alice: (usize, usize),
    bob: (usize, usize),
) -> Result<BlockReduction> {
    let s = table.scenario();
    let xs = [alice.0, alice.1];
    let ys = [bob.0, bob.1];
    if xs.iter().any(|&x| x >= s.settings_a) || ys.iter().any(|&y| y >= s.settings_b) {
        return Err(Error::InvalidTable(format!(
            "settings {alice:?}/{bob:?} outside a [{{{},{}}},{{{},{}}}] table",
            s.settings_a, s.outcomes, s.settings_b, s.outcomes
        )));
    }
    let idx = block.indices();
    if idx.iter().any(|&k| k >= s.outcomes) {
        return Err(Error::InvalidTable(format!("block {block:?} outside {} outcomes", s.outcomes)));
    }
    let cells: Vec<(usize, usize)> = idx.iter().flat_map(|&a| idx.iter().map(move |&b| (a, b))).collect();

    let mut per_setting = Vec::with_capacity(4);
    let (mut pooled_block, mut pooled_total) = (0u64, 0u64);
    for &x in &xs {
        for &y in &ys {
            per_setting.push(cells.iter().map(|&(a, b)| table.p(a, b, x, y)).sum::<f64>());
            if table.counts().is_some() {
                pooled_block += cells.iter().map(|&(a, b)| table.count(a, b, x, y).unwrap_or(0)).sum::<u64>();
                pooled_total += table.setting_total(x, y).unwrap_or(0);
            }
        }
    }
    let weight = if pooled_total > 0 {
        pooled_block as f64 / pooled_total as f64
    } else {
        per_setting.iter().sum::<f64>() / 4.0
    };
    let max = per_setting.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = per_setting.iter().cloned().fold(f64::INFINITY, f64::min);

    let conditional = match block {
        Block::Single(_) => None,
        Block::Pair(_, _) if min < EMPTY_BLOCK_WEIGHT => None,
        Block::Pair(i, j) => {
            let scen = BellScenario::chsh();
            let labels = [i, j];
            let mut probs = vec![0.0; scen.cell_count()];
            let mut counts = table.counts().map(|_| vec![0u64; scen.cell_count()]);
            for (xi, &x) in xs.iter().enumerate() {
                for (yi, &y) in ys.iter().enumerate() {
                    let w = per_setting[xi * 2 + yi];
                    for a in 0..2 {
                        for b in 0..2 {
                            let k = scen.index(xi, yi, a, b);
                            probs[k] = table.p(labels[a], labels[b], x, y) / w;
                            if let Some(c) = counts.as_mut() {
                                c[k] = table.count(labels[a], labels[b], x, y).unwrap_or(0);
                            }
                        }
                    }
                }
            }
            Some(match counts {
                Some(c) => CorrelationTable::from_counts(scen, c)?,
                None => CorrelationTable::new(scen, probs, Source::Exact)?,
            })
        }
    };
    Ok(BlockReduction {
        block,
        weight,
        weight_spread: max - min,
        table: conditional,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockResult {
    pub pairing: PairingId,
    pub block: Block,
    /// Block mass normalized within its pairing.
    pub weight: f64,
    pub raw_weight: f64,
    pub weight_spread: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction: Option<ExtractionResult>,
    /// tan θ_B = c_j / c_i.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
}

/// Reduces and extracts every block of both pairings.
pub fn analyze_blocks(table: &CorrelationTable, layout: &QuditLayout) -> Result<Vec<BlockResult>> {
    let s = table.scenario();
    if s != BellScenario::qudit(layout.d) {
        return Err(Error::InvalidTable(format!(
            "expected a [{{3,{d}}},{{4,{d}}}] table, got [{{{},{}}},{{{},{}}}]",
            s.settings_a,
            s.outcomes,
            s.settings_b,
            s.outcomes,
            d = layout.d
        )));
    }
    let mut out = Vec::new();
    for pairing in layout.pairings() {
        let (alice, bob) = pairing.id.settings();
        let reductions = pairing
            .blocks
            .iter()
            .map(|&b| block_reduce(table, b, alice, bob))
            .collect::<Result<Vec<_>>>()?;
        let total: f64 = reductions.iter().map(|r| r.weight).sum();
        if !(total > 0.0) {
            return Err(Error::Numerical(format!("pairing {:?} carries no probability mass", pairing.id)));
        }
        for r in reductions {
            let extraction = r.table.as_ref().map(extract_theta_oriented).transpose()?;
            out.push(BlockResult {
                pairing: pairing.id,
                block: r.block,
                weight: r.weight / total,
                raw_weight: r.weight,
                weight_spread: r.weight_spread,
                ratio: extraction.map(|e| e.theta.tan()),
                extraction,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// P1 determines the coefficients, P2 checks them.
    #[default]
    Primary,
    /// Weighted least squares on log-ratios of every block of both pairings.
    LeastSquares,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedState {
    pub d: usize,
    pub coeffs_est: Vec<f64>,
    pub consistency_residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity_vs_reference: Option<f64>,
    pub mode: PairingMode,
    /// Blocks with mass but no usable ratio.
    pub degenerate_blocks: Vec<Block>,
    pub blocks: Vec<BlockResult>,
}

impl ReconstructedState {
    pub fn schmidt_state(&self) -> Result<SchmidtState> {
        SchmidtState::normalized(self.coeffs_est.clone()).map(|(s, _)| s)
    }

    /// Σ c_i |ii⟩ from the estimated coefficients.
    pub fn amplitudes(&self) -> Vec<C64> {
        let d = self.d;
        let mut psi = vec![C64::new(0.0, 0.0); d * d];
        for (i, &c) in self.coeffs_est.iter().enumerate() {
            psi[i * d + i] = C64::new(c, 0.0);
        }
        psi
    }
}

/// |tan θ_B − c_j/c_i| for a measured block angle and estimated pair,
/// evaluated as cot-difference when the estimate has c_j > c_i.
fn ratio_residual(theta_b: f64, ci: f64, cj: f64) -> f64 {
    if ci == 0.0 && cj == 0.0 {
        return 0.0;
    }
    let phi = cj.atan2(ci);
    let diff = (theta_b - phi).sin().abs();
    let r = if phi <= FRAC_PI_4 {
        diff / (theta_b.cos() * phi.cos())
    } else {
        diff / (theta_b.sin() * phi.sin())
    };
    if r.is_finite() {
        r.min(f64::MAX)
    } else {
        f64::MAX
    }
}

fn residual_over<'a>(blocks: impl Iterator<Item = &'a BlockResult>, coeffs: &[f64]) -> f64 {
    blocks
        .filter_map(|b| match (b.block, b.extraction) {
            (Block::Pair(i, j), Some(e)) => Some(ratio_residual(e.theta, coeffs[i], coeffs[j])),
            _ => None,
        })
        .fold(0.0, f64::max)
}

fn normalize(mut c: Vec<f64>) -> Result<Vec<f64>> {
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::Numerical("reconstructed coefficients vanish".into()));
    }
    c.iter_mut().for_each(|x| *x = (*x / norm).max(0.0));
    Ok(c)
}

fn primary_coefficients(d: usize, blocks: &[BlockResult], degenerate: &mut Vec<Block>) -> Vec<f64> {
    let mut c = vec![0.0; d];
    for b in blocks.iter().filter(|b| b.pairing == PairingId::P1) {
        let w = b.weight.max(0.0);
        match (b.block, b.extraction) {
            (Block::Single(k), _) => c[k] = w.sqrt(),
            (Block::Pair(i, j), Some(e)) => {
                c[i] = w.sqrt() * e.theta.cos();
                c[j] = w.sqrt() * e.theta.sin();
            }
            (Block::Pair(i, j), None) => {
                // no usable conditional table: split the (tiny) mass evenly
                if w > 0.0 {
                    degenerate.push(b.block);
                }
                c[i] = (w / 2.0).sqrt();
                c[j] = (w / 2.0).sqrt();
            }
        }
    }
    c
}

/// Weighted least squares on ln c_j − ln c_i = ln tan θ_B over all blocks;
/// `None` when some ratio is 0 or ∞ or the ratio graph is disconnected.
fn least_squares_coefficients(d: usize, blocks: &[BlockResult]) -> Option<Vec<f64>> {
    let mut lap = vec![vec![0.0; d]; d];
    let mut rhs = vec![0.0; d];
    for b in blocks {
        let (Block::Pair(i, j), Some(e)) = (b.block, b.extraction) else {
            continue;
        };
        if e.theta <= 0.0 || e.theta >= FRAC_PI_2 {
            return None;
        }
        let r = e.theta.tan().ln();
        let w = b.raw_weight.max(f64::MIN_POSITIVE);
        lap[i][i] += w;
        lap[j][j] += w;
        lap[i][j] -= w;
        lap[j][i] -= w;
        rhs[j] += w * r;
        rhs[i] -= w * r;
    }
    // gauge ln c_0 = 0: solve the reduced (d−1)x(d−1) system
    let n = d - 1;
    let mut a: Vec<Vec<f64>> = (1..d).map(|r| (1..d).map(|c| lap[r][c]).collect()).collect();
    let mut b: Vec<f64> = (1..d).map(|r| rhs[r]).collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in 0..n {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut logc = vec![0.0];
    logc.extend((0..n).map(|k| b[k] / a[k][k]));
    Some(logc.into_iter().map(f64::exp).collect())
}

/// Coefficient reconstruction with the standard layout in primary mode.
pub fn reconstruct_coefficients(table: &CorrelationTable, d: usize) -> Result<ReconstructedState> {
    reconstruct_with(table, &QuditLayout::standard(d)?, PairingMode::Primary)
}

pub fn reconstruct_with(
    table: &CorrelationTable,
    layout: &QuditLayout,
    mode: PairingMode,
) -> Result<ReconstructedState> {
    let blocks = analyze_blocks(table, layout)?;
    let d = layout.d;
    let mut degenerate = Vec::new();
    let primary = normalize(primary_coefficients(d, &blocks, &mut degenerate))?;
    let (coeffs, mode) = match mode {
        PairingMode::Primary => (primary, PairingMode::Primary),
        PairingMode::LeastSquares => match least_squares_coefficients(d, &blocks) {
            Some(c) => (normalize(c)?, PairingMode::LeastSquares),
            None => (primary, PairingMode::Primary),
        },
    };
    let residual = match mode {
        PairingMode::Primary => residual_over(blocks.iter().filter(|b| b.pairing == PairingId::P2), &coeffs),
        PairingMode::LeastSquares => residual_over(blocks.iter(), &coeffs),
    };
    Ok(ReconstructedState {
        d,
        coeffs_est: coeffs,
        consistency_residual: residual,
        fidelity_vs_reference: None,
        mode,
        degenerate_blocks: degenerate,
        blocks,
    })
}

#[derive(Debug, Clone, Copy)]
pub enum Reference<'a> {
    Density(&'a DensityMatrix),
    Schmidt(&'a SchmidtState),
}

/// ⟨ψ_est|ρ_ref|ψ_est⟩ with ψ_est = Σ c_i |ii⟩.
pub fn reconstruction_fidelity(est: &ReconstructedState, reference: Reference<'_>) -> Result<f64> {
    match reference {
        Reference::Density(rho) => {
            if rho.dim() != est.d * est.d {
                return Err(Error::DimensionMismatch(format!(
                    "reference of dimension {} for d = {}",
                    rho.dim(),
                    est.d
                )));
            }
            fidelity_to_pure(rho, &est.amplitudes())
        }
        Reference::Schmidt(s) => {
            if s.d() != est.d {
                return Err(Error::DimensionMismatch(format!(
                    "reference with d = {} for d = {}",
                    s.d(),
                    est.d
                )));
            }
            let overlap: f64 = s.coeffs().iter().zip(&est.coeffs_est).map(|(a, b)| a * b).sum();
            Ok((overlap * overlap).min(1.0))
        }
    }
}
