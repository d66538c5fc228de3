//! The LABS problem: spin sequences, autocorrelations, sidelobe energy, merit
//! factor, the diagonal cost Hamiltonian and its interaction terms, the order-8
//! energy-preserving symmetry group, and exhaustive ground truth.
//!
//! Bit convention used everywhere in the crate: bit `j` of a basis-state index
//! (little-endian, bit 0 = qubit 0 = sequence position 1) maps to the spin
//! `s_{j+1} = 1 - 2 b_j`, so bit value 0 is spin `+1`.

use std::io::{Read, Write};
use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget;
use crate::error::{invalid, LabsError, Result};

/// Coefficient carried by every four-body term of the cost Hamiltonian.
pub const FOUR_BODY_COEFF: i64 = 2;

/// A sequence of `N >= 1` spins, each exactly `+1` or `-1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<i8>", into = "Vec<i8>")]
pub struct SpinSequence {
    spins: Vec<i8>,
}

impl TryFrom<Vec<i8>> for SpinSequence {
    type Error = LabsError;
    fn try_from(spins: Vec<i8>) -> Result<Self> {
        SpinSequence::new(spins)
    }
}

impl From<SpinSequence> for Vec<i8> {
    fn from(s: SpinSequence) -> Vec<i8> {
        s.spins
    }
}

impl SpinSequence {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if spins.is_empty() {
            return invalid("a spin sequence needs at least one spin");
        }
        if let Some(pos) = spins.iter().position(|&s| s != 1 && s != -1) {
            return invalid(format!("spin at position {} is {}, expected +1 or -1", pos + 1, spins[pos]));
        }
        Ok(Self { spins })
    }

    /// All spins `+1`.
    pub fn ones(n: usize) -> Result<Self> {
        Self::new(vec![1; n])
    }

    pub fn from_index(index: u64, n: usize) -> Result<Self> {
        check_index(index, n)?;
        let spins = (0..n).map(|j| 1 - 2 * ((index >> j) & 1) as i8).collect();
        Ok(Self { spins })
    }

    pub fn index(&self) -> u64 {
        self.spins
            .iter()
            .enumerate()
            .fold(0u64, |acc, (j, &s)| if s < 0 { acc | (1 << j) } else { acc })
    }

    /// Parses a `+`/`-` string such as `"++-"`.
    pub fn parse_pm(text: &str) -> Result<Self> {
        let spins = text
            .trim()
            .chars()
            .map(|c| match c {
                '+' => Ok(1),
                '-' => Ok(-1),
                other => Err(LabsError::Format(format!("unexpected character {other:?} in +/- sequence"))),
            })
            .collect::<Result<Vec<i8>>>()?;
        Self::new(spins)
    }

    pub fn to_pm_string(&self) -> String {
        self.spins.iter().map(|&s| if s > 0 { '+' } else { '-' }).collect()
    }

    pub fn from_hex(text: &str, n: usize) -> Result<Self> {
        Self::from_index(hex_to_index(text, n)?, n)
    }

    pub fn to_hex(&self) -> String {
        index_to_hex(self.index(), self.len())
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn flipped(&self, i: usize) -> Self {
        let mut spins = self.spins.clone();
        spins[i] = -spins[i];
        Self { spins }
    }

    /// `A_k = sum_{i=1}^{N-k} s_i s_{i+k}` for `1 <= k <= N-1`.
    pub fn autocorrelation(&self, k: usize) -> Result<i64> {
        let n = self.len();
        if k == 0 || k >= n {
            return invalid(format!("autocorrelation lag k={k} outside [1, {}]", n.saturating_sub(1)));
        }
        Ok(lag_product(&self.spins, k))
    }

    /// `[A_1, ..., A_{N-1}]`.
    pub fn autocorrelations(&self) -> Vec<i64> {
        (1..self.len()).map(|k| lag_product(&self.spins, k)).collect()
    }

    pub fn sidelobe_energy(&self) -> i64 {
        self.autocorrelations().iter().map(|a| a * a).sum()
    }

    /// `N^2 / (2 E)`. Undefined for `N = 1`, where the energy sum is empty.
    pub fn merit_factor(&self) -> Result<f64> {
        merit_factor_of(self.len(), self.sidelobe_energy())
    }

    /// Skew-symmetry for odd `N = 2k - 1`: `s_{k+l} = (-1)^l s_{k-l}` for
    /// `l = 1..k-1`. Even lengths are never skew-symmetric.
    pub fn is_skew_symmetric(&self) -> bool {
        let n = self.len();
        if n % 2 == 0 {
            return false;
        }
        let k = (n + 1) / 2;
        (1..k).all(|l| {
            let sign = if l % 2 == 0 { 1 } else { -1 };
            // 1-based positions k+l and k-l
            self.spins[k + l - 1] == sign * self.spins[k - l - 1]
        })
    }

    /// Orbit under negation, reversal and alternating flip, deduplicated and
    /// sorted by basis-state index.
    pub fn symmetry_orbit(&self) -> Vec<SpinSequence> {
        let mut orbit: Vec<SpinSequence> = SymmetryAction::all().iter().map(|g| g.apply(self)).collect();
        orbit.sort_by_key(|s| s.index());
        orbit.dedup();
        orbit
    }
}

fn lag_product(spins: &[i8], k: usize) -> i64 {
    spins[..spins.len() - k]
        .iter()
        .zip(&spins[k..])
        .map(|(&a, &b)| (a * b) as i64)
        .sum()
}

pub fn merit_factor_of(n: usize, energy: i64) -> Result<f64> {
    if energy <= 0 {
        return invalid(format!("merit factor undefined for N={n} with sidelobe energy {energy}"));
    }
    Ok((n * n) as f64 / (2.0 * energy as f64))
}

/// Sidelobe energy of a basis-state index, computed from scratch in `O(N^2)`.
pub fn energy_of_index(index: u64, n: usize) -> i64 {
    let mut total = 0i64;
    for k in 1..n {
        let mask = (1u64 << (n - k)) - 1;
        // s_i s_{i+k} = +1 iff bits j and j+k agree
        let disagree = ((index ^ (index >> k)) & mask).count_ones() as i64;
        let a = (n - k) as i64 - 2 * disagree;
        total += a * a;
    }
    total
}

fn check_index(index: u64, n: usize) -> Result<()> {
    if n == 0 || n > 64 {
        return invalid(format!("sequence length N={n} outside [1, 64]"));
    }
    if n < 64 && index >> n != 0 {
        return invalid(format!("index {index:#x} has bits beyond N={n}"));
    }
    Ok(())
}

/// Zero-padded lowercase hex, `ceil(N/4)` digits.
pub fn index_to_hex(index: u64, n: usize) -> String {
    let width = n.div_ceil(4).max(1);
    format!("{index:0width$x}")
}

pub fn hex_to_index(text: &str, n: usize) -> Result<u64> {
    let t = text.trim();
    let t = t.strip_prefix("0x").unwrap_or(t);
    if t.is_empty() {
        return Err(LabsError::Format("empty hex bitstring".into()));
    }
    let index = u64::from_str_radix(t, 16).map_err(|e| LabsError::Format(format!("bad hex bitstring {text:?}: {e}")))?;
    check_index(index, n)?;
    Ok(index)
}

/// An element of the order-8 group generated by global negation, reversal and
/// the alternating flip `s_i -> (-1)^i s_i`. Applied as reverse, then
/// alternate, then negate; every composition reduces to this normal form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SymmetryAction {
    pub negate: bool,
    pub alternate: bool,
    pub reverse: bool,
}

impl SymmetryAction {
    pub const IDENTITY: Self = Self { negate: false, alternate: false, reverse: false };

    pub fn all() -> [SymmetryAction; 8] {
        let mut out = [Self::IDENTITY; 8];
        for (bits, slot) in out.iter_mut().enumerate() {
            *slot = Self { negate: bits & 1 != 0, alternate: bits & 2 != 0, reverse: bits & 4 != 0 };
        }
        out
    }

    pub fn apply(&self, seq: &SpinSequence) -> SpinSequence {
        let n = seq.len();
        let mut spins = seq.spins.clone();
        if self.reverse {
            spins.reverse();
        }
        if self.alternate {
            // 1-based odd positions pick up (-1)^i = -1
            for s in spins.iter_mut().step_by(2) {
                *s = -*s;
            }
        }
        if self.negate {
            spins.iter_mut().for_each(|s| *s = -*s);
        }
        debug_assert_eq!(spins.len(), n);
        SpinSequence { spins }
    }

    /// Same action on a basis-state index of length `n`.
    pub fn apply_index(&self, index: u64, n: usize) -> u64 {
        let full = full_mask(n);
        let mut x = index;
        if self.reverse {
            x = x.reverse_bits() >> (64 - n);
        }
        if self.alternate {
            x ^= 0x5555_5555_5555_5555 & full;
        }
        if self.negate {
            x ^= full;
        }
        x
    }
}

pub(crate) fn full_mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// Orbit of a basis-state index, sorted and deduplicated.
pub fn orbit_of_index(index: u64, n: usize) -> Vec<u64> {
    let mut out: Vec<u64> = SymmetryAction::all().iter().map(|g| g.apply_index(index, n)).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// The cost Hamiltonian as explicit interaction terms. Qubit indices are
/// 0-based (`index = position - 1`), strictly increasing within each term.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub n: usize,
    /// Pairs `(i, i+2k)`, coefficient 1.
    pub two_body: Vec<[usize; 2]>,
    /// Quadruples `(i, i+t, i+k, i+k+t)` with `t < k`, coefficient 2.
    pub four_body: Vec<[usize; 4]>,
    /// `N(N-1)/2`; `E = constant_offset + 2 H_C`.
    pub constant_offset: i64,
}

impl ProblemInstance {
    /// Enumerates the interaction terms for length `n >= 2`, taking the
    /// summation ranges literally.
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return invalid(format!("the cost Hamiltonian needs N >= 2, got N={n}"));
        }
        if n > 64 {
            return invalid(format!("N={n} exceeds the 64-bit index width"));
        }
        let mut two_body = Vec::new();
        for i in 1..=n.saturating_sub(2) {
            for k in 1..=(n - i) / 2 {
                two_body.push([i - 1, i + 2 * k - 1]);
            }
        }
        let mut four_body = Vec::new();
        for i in 1..=n.saturating_sub(3) {
            for t in 1..=(n - i - 1) / 2 {
                for k in (t + 1)..=(n - i - t) {
                    four_body.push([i - 1, i + t - 1, i + k - 1, i + k + t - 1]);
                }
            }
        }
        let instance = Self { n, two_body, four_body, constant_offset: (n * (n - 1) / 2) as i64 };
        instance.validate()?;
        Ok(instance)
    }

    /// Structural invariants: index bounds, ordering, no duplicates.
    pub fn validate(&self) -> Result<()> {
        let in_range = |q: usize| q < self.n;
        for t in &self.two_body {
            if !(t[0] < t[1] && in_range(t[1])) {
                return Err(LabsError::Internal(format!("malformed two-body term {t:?}")));
            }
        }
        for t in &self.four_body {
            if !(t[0] < t[1] && t[1] < t[2] && t[2] < t[3] && in_range(t[3])) {
                return Err(LabsError::Internal(format!("malformed four-body term {t:?}")));
            }
        }
        let mut seen2 = self.two_body.clone();
        seen2.sort_unstable();
        seen2.dedup();
        let mut seen4 = self.four_body.clone();
        seen4.sort_unstable();
        seen4.dedup();
        if seen2.len() != self.two_body.len() || seen4.len() != self.four_body.len() {
            return Err(LabsError::Internal("duplicate interaction terms".into()));
        }
        Ok(())
    }

    pub fn hamiltonian_value(&self, seq: &SpinSequence) -> Result<i64> {
        if seq.len() != self.n {
            return Err(LabsError::SizeMismatch { expected: self.n, actual: seq.len() });
        }
        Ok(self.hamiltonian_value_index(seq.index()))
    }

    /// `H_C` on a basis state, evaluated term by term.
    pub fn hamiltonian_value_index(&self, index: u64) -> i64 {
        let z = |mask: u64| if (index & mask).count_ones() % 2 == 0 { 1i64 } else { -1 };
        let two: i64 = self.two_body.iter().map(|t| z((1 << t[0]) | (1 << t[1]))).sum();
        let four: i64 = self
            .four_body
            .iter()
            .map(|t| z((1 << t[0]) | (1 << t[1]) | (1 << t[2]) | (1 << t[3])))
            .sum();
        two + FOUR_BODY_COEFF * four
    }

    /// `H_C` recovered from a sidelobe energy through the offset identity.
    pub fn hc_from_energy(&self, energy: i64) -> f64 {
        (energy - self.constant_offset) as f64 / 2.0
    }
}

/// Sequence plus its autocorrelations, supporting `O(N)` single-spin flips.
#[derive(Clone, Debug)]
pub struct FlipState {
    spins: Vec<i8>,
    corr: Vec<i64>,
    energy: i64,
}

impl FlipState {
    pub fn new(seq: &SpinSequence) -> Self {
        let corr = seq.autocorrelations();
        let energy = corr.iter().map(|a| a * a).sum();
        Self { spins: seq.spins.clone(), corr, energy }
    }

    pub fn from_index(index: u64, n: usize) -> Result<Self> {
        Ok(Self::new(&SpinSequence::from_index(index, n)?))
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn energy(&self) -> i64 {
        self.energy
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn autocorrelations(&self) -> &[i64] {
        &self.corr
    }

    pub fn to_sequence(&self) -> SpinSequence {
        SpinSequence { spins: self.spins.clone() }
    }

    /// Energy change from flipping spin `i` (0-based), without applying it.
    pub fn delta(&self, i: usize) -> i64 {
        let n = self.spins.len();
        let s = &self.spins;
        let si = s[i] as i64;
        let reach = i.max(n - 1 - i);
        let mut d_energy = 0i64;
        for k in 1..=reach {
            let mut partner = 0i64;
            if i + k < n {
                partner += s[i + k] as i64;
            }
            if i >= k {
                partner += s[i - k] as i64;
            }
            if partner != 0 {
                let d_a = -2 * si * partner;
                let a = self.corr[k - 1];
                d_energy += d_a * (2 * a + d_a);
            }
        }
        d_energy
    }

    /// Flips spin `i` and returns the new energy.
    pub fn flip(&mut self, i: usize) -> i64 {
        let n = self.spins.len();
        let si = self.spins[i] as i64;
        let reach = i.max(n - 1 - i);
        for k in 1..=reach {
            let mut partner = 0i64;
            if i + k < n {
                partner += self.spins[i + k] as i64;
            }
            if i >= k {
                partner += self.spins[i - k] as i64;
            }
            if partner != 0 {
                let d_a = -2 * si * partner;
                let a = self.corr[k - 1];
                self.energy += d_a * (2 * a + d_a);
                self.corr[k - 1] = a + d_a;
            }
        }
        self.spins[i] = -self.spins[i];
        self.energy
    }
}

/// Energy change and updated autocorrelations for flipping spin `i`
/// (0-based) of `seq`, given its current autocorrelations.
///
/// With debug assertions enabled the supplied autocorrelations are audited
/// against a from-scratch recomputation.
pub fn incremental_flip_delta(seq: &SpinSequence, autocorrs: &[i64], i: usize) -> Result<(i64, Vec<i64>)> {
    let n = seq.len();
    if i >= n {
        return invalid(format!("flip index {i} outside [0, {n})"));
    }
    if autocorrs.len() != n - 1 {
        return Err(LabsError::SizeMismatch { expected: n - 1, actual: autocorrs.len() });
    }
    if cfg!(debug_assertions) && autocorrs != seq.autocorrelations().as_slice() {
        return Err(LabsError::Internal("stale autocorrelations supplied to incremental_flip_delta".into()));
    }
    let energy: i64 = autocorrs.iter().map(|a| a * a).sum();
    let mut state = FlipState { spins: seq.spins.clone(), corr: autocorrs.to_vec(), energy };
    let new_energy = state.flip(i);
    Ok((new_energy - energy, state.corr))
}

/// Visits every basis state of length `n` in reflected Gray-code order,
/// starting at index 0. The callback receives `(index, energy)`; each step
/// costs `O(N)`.
pub fn gray_walk<F>(n: usize, mut visit: F) -> Result<()>
where
    F: FnMut(u64, i64) -> ControlFlow<()>,
{
    if n == 0 || n > 63 {
        return invalid(format!("Gray-code walk needs 1 <= N <= 63, got {n}"));
    }
    gray_walk_block(n, 0, n, &mut visit);
    Ok(())
}

/// Walks the `2^low_bits` states whose high bits equal those of `base`.
fn gray_walk_block<F>(n: usize, base: u64, low_bits: usize, visit: &mut F)
where
    F: FnMut(u64, i64) -> ControlFlow<()>,
{
    let mut state = FlipState::from_index(base, n).expect("valid base index");
    let mut index = base;
    if visit(index, state.energy).is_break() {
        return;
    }
    let steps = 1u64 << low_bits;
    for t in 1..steps {
        let bit = t.trailing_zeros() as usize;
        let e = state.flip(bit);
        index ^= 1 << bit;
        if visit(index, e).is_break() {
            return;
        }
    }
}

/// All `2^N` sidelobe energies with the minimum and its optimal set.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyTable {
    n: usize,
    energies: Vec<i64>,
    min_energy: i64,
    optimal_indices: Vec<u64>,
}

const TABLE_MAGIC: &[u8; 4] = b"LABS";
const TABLE_VERSION: u16 = 1;

/// JSON summary of an energy table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyTableSummary {
    pub n: usize,
    pub min_energy: i64,
    pub optimal_count: usize,
    pub optimal_bitstrings: Vec<String>,
}

impl EnergyTable {
    /// Exhaustive Gray-code enumeration. With `parallel` the index space is
    /// split into blocks of fixed high bits; the result is identical either way.
    pub fn build(n: usize, parallel: bool) -> Result<Self> {
        if n == 0 {
            return invalid("energy table needs N >= 1");
        }
        budget::check_exponential_alloc(n, 8, "energy table")?;
        let size = 1usize << n;
        let mut energies = vec![0i64; size];
        let high_bits = if parallel { n.min(8) } else { 0 };
        let low_bits = n - high_bits;
        let fill = |(block, chunk): (usize, &mut [i64])| {
            let base = (block as u64) << low_bits;
            gray_walk_block(n, base, low_bits, &mut |index, e| {
                chunk[(index - base) as usize] = e;
                ControlFlow::Continue(())
            });
        };
        if parallel {
            energies.par_chunks_mut(1 << low_bits).enumerate().for_each(fill);
        } else {
            energies.chunks_mut(1 << low_bits).enumerate().for_each(fill);
        }
        Ok(Self::from_energies(n, energies))
    }

    fn from_energies(n: usize, energies: Vec<i64>) -> Self {
        let min_energy = *energies.iter().min().expect("non-empty table");
        let optimal_indices =
            energies.iter().enumerate().filter(|(_, &e)| e == min_energy).map(|(i, _)| i as u64).collect();
        Self { n, energies, min_energy, optimal_indices }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn energies(&self) -> &[i64] {
        &self.energies
    }

    pub fn energy(&self, index: u64) -> i64 {
        self.energies[index as usize]
    }

    pub fn min_energy(&self) -> i64 {
        self.min_energy
    }

    pub fn optimal_indices(&self) -> &[u64] {
        &self.optimal_indices
    }

    pub fn optimal_merit_factor(&self) -> Result<f64> {
        merit_factor_of(self.n, self.min_energy)
    }

    /// Random-guess success probability from the actual optimal count.
    pub fn p0(&self) -> f64 {
        self.optimal_indices.len() as f64 / (1u64 << self.n) as f64
    }

    /// The `8 / 2^N` estimate that assumes a single full orbit of optima.
    pub fn p0_single_orbit(&self) -> f64 {
        8.0 / (1u64 << self.n) as f64
    }

    /// Distinct energies in ascending order with their degeneracies.
    pub fn levels(&self) -> Vec<(i64, u64)> {
        let mut counts = std::collections::BTreeMap::new();
        for &e in &self.energies {
            *counts.entry(e).or_insert(0u64) += 1;
        }
        counts.into_iter().collect()
    }

    pub fn summary(&self) -> EnergyTableSummary {
        EnergyTableSummary {
            n: self.n,
            min_energy: self.min_energy,
            optimal_count: self.optimal_indices.len(),
            optimal_bitstrings: self.optimal_indices.iter().map(|&i| index_to_hex(i, self.n)).collect(),
        }
    }

    /// Binary layout: `"LABS"`, version `u16`, `N` as `u16`, then `2^N`
    /// little-endian `i64` energies in index order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TABLE_MAGIC)?;
        w.write_all(&TABLE_VERSION.to_le_bytes())?;
        w.write_all(&(self.n as u16).to_le_bytes())?;
        let mut buf = Vec::with_capacity(8 * 4096);
        for chunk in self.energies.chunks(4096) {
            buf.clear();
            for e in chunk {
                buf.extend_from_slice(&e.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TABLE_MAGIC {
            return Err(LabsError::Format("missing LABS magic bytes".into()));
        }
        let mut word = [0u8; 2];
        r.read_exact(&mut word)?;
        let version = u16::from_le_bytes(word);
        if version != TABLE_VERSION {
            return Err(LabsError::Format(format!("unsupported energy table version {version}")));
        }
        r.read_exact(&mut word)?;
        let n = u16::from_le_bytes(word) as usize;
        if n == 0 {
            return Err(LabsError::Format("energy table with N=0".into()));
        }
        budget::check_exponential_alloc(n, 8, "energy table")?;
        let size = 1usize << n;
        let mut bytes = vec![0u8; size * 8];
        r.read_exact(&mut bytes)?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(LabsError::Format("trailing bytes after energy table".into()));
        }
        let energies = bytes.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self::from_energies(n, energies))
    }
}

/// Exhaustive minimum without materialising the table. With
/// `fundamental_domain` only sequences starting `++` are enumerated and the
/// optimal set is recovered by orbit expansion.
pub fn exhaustive_ground_truth(n: usize, fundamental_domain: bool) -> Result<(i64, Vec<u64>)> {
    if n == 0 || n > 63 {
        return invalid(format!("exhaustive search needs 1 <= N <= 63, got {n}"));
    }
    let mut best = i64::MAX;
    let mut optimal = Vec::new();
    let mut record = |index: u64, e: i64| {
        if e < best {
            best = e;
            optimal.clear();
        }
        if e == best {
            optimal.push(index);
        }
        ControlFlow::Continue(())
    };
    if fundamental_domain && n >= 2 {
        // bits 0 and 1 clear <=> s_1 = s_2 = +1; walk the remaining N-2 bits
        let mut state = FlipState::from_index(0, n)?;
        let mut index = 0u64;
        let _ = record(index, state.energy());
        for t in 1..(1u64 << (n - 2)) {
            let bit = t.trailing_zeros() as usize + 2;
            let e = state.flip(bit);
            index ^= 1 << bit;
            let _ = record(index, e);
        }
        let mut expanded: Vec<u64> = optimal.iter().flat_map(|&x| orbit_of_index(x, n)).collect();
        expanded.sort_unstable();
        expanded.dedup();
        Ok((best, expanded))
    } else {
        gray_walk(n, record)?;
        optimal.sort_unstable();
        Ok((best, optimal))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(s: &str) -> SpinSequence {
        SpinSequence::parse_pm(s).unwrap()
    }

    #[test]
    fn autocorrelation_examples() {
        assert_eq!(seq("+++").autocorrelation(1).unwrap(), 2);
        assert_eq!(seq("++-").autocorrelation(1).unwrap(), 0);
        assert_eq!(seq("+++-").autocorrelation(2).unwrap(), 0);
        assert!(seq("+++").autocorrelation(0).is_err());
        assert!(seq("+++").autocorrelation(3).is_err());
    }

    #[test]
    fn energy_and_merit_factor_examples() {
        assert_eq!(seq("+++").sidelobe_energy(), 5);
        assert_eq!(seq("++-").sidelobe_energy(), 1);
        assert_eq!(seq("+++-").sidelobe_energy(), 2);
        assert_eq!(seq("+-").merit_factor().unwrap(), 2.0);
        assert_eq!(seq("++").merit_factor().unwrap(), 2.0);
        assert_eq!(seq("+++-").merit_factor().unwrap(), 4.0);
        assert_eq!(seq("++-").merit_factor().unwrap(), 4.5);
    }

    #[test]
    fn single_spin_has_zero_energy_and_no_merit_factor() {
        let s = seq("+");
        assert_eq!(s.sidelobe_energy(), 0);
        assert!(s.merit_factor().is_err());
    }

    #[test]
    fn rejects_invalid_spins() {
        assert!(SpinSequence::new(vec![1, 0, -1]).is_err());
        assert!(SpinSequence::new(vec![]).is_err());
        assert!(SpinSequence::parse_pm("+x-").is_err());
    }

    #[test]
    fn bit_convention() {
        // bit 0 is position 1; a set bit is spin -1
        let s = SpinSequence::from_index(0b100, 3).unwrap();
        assert_eq!(s.spins(), &[1, 1, -1]);
        assert_eq!(s.index(), 0b100);
        assert_eq!(s.to_hex(), "4");
        assert_eq!(SpinSequence::from_hex("0x4", 3).unwrap(), s);
        assert!(SpinSequence::from_hex("8", 3).is_err());
        assert!(SpinSequence::from_index(8, 3).is_err());
    }

    #[test]
    fn term_enumeration_examples() {
        let i3 = ProblemInstance::new(3).unwrap();
        assert_eq!(i3.two_body, vec![[0, 2]]);
        assert!(i3.four_body.is_empty());
        let i4 = ProblemInstance::new(4).unwrap();
        assert_eq!(i4.two_body, vec![[0, 2], [1, 3]]);
        assert_eq!(i4.four_body, vec![[0, 1, 2, 3]]);
        let i5 = ProblemInstance::new(5).unwrap();
        assert_eq!(i5.four_body.len(), 3);
        assert!(ProblemInstance::new(1).is_err());
    }

    #[test]
    fn four_body_terms_have_equal_outer_gaps() {
        for n in 4..=20 {
            for t in ProblemInstance::new(n).unwrap().four_body {
                assert_eq!(t[1] - t[0], t[3] - t[2], "N={n} term {t:?}");
                assert!(t[1] - t[0] < t[2] - t[0]);
            }
        }
    }

    #[test]
    fn hamiltonian_examples() {
        let inst = ProblemInstance::new(3).unwrap();
        assert_eq!(inst.hamiltonian_value(&seq("+++")).unwrap(), 1);
        assert_eq!(inst.hamiltonian_value(&seq("++-")).unwrap(), -1);
        assert!(inst.hamiltonian_value(&seq("++")).is_err());
    }

    #[test]
    fn offset_identity_small_n() {
        for n in 2..=10 {
            let inst = ProblemInstance::new(n).unwrap();
            for x in 0..(1u64 << n) {
                let e = energy_of_index(x, n);
                assert_eq!(e, inst.constant_offset + 2 * inst.hamiltonian_value_index(x), "N={n} x={x}");
            }
        }
    }

    #[test]
    fn skew_symmetry_examples() {
        assert!(seq("++-").is_skew_symmetric());
        assert!(!seq("++++").is_skew_symmetric());
        assert!(!seq("+-+-").is_skew_symmetric());
        assert!(seq("+++-+").is_skew_symmetric());
        assert!(!seq("+++++").is_skew_symmetric());
    }

    #[test]
    fn orbit_examples() {
        let o = seq("++").symmetry_orbit();
        assert!(o.contains(&seq("--")));
        // ++- is fixed by reverse-then-alternate, so its orbit has 4 elements
        let o3 = seq("++-").symmetry_orbit();
        assert_eq!(o3.len(), 4);
        assert!(o3.iter().all(|s| s.sidelobe_energy() == 1));
    }

    #[test]
    fn symmetry_actions_form_a_group() {
        let probe = seq("++-+---+-");
        let images: Vec<SpinSequence> = SymmetryAction::all().iter().map(|g| g.apply(&probe)).collect();
        for a in SymmetryAction::all() {
            for b in SymmetryAction::all() {
                let composed = a.apply(&b.apply(&probe));
                assert!(images.contains(&composed));
            }
        }
    }

    #[test]
    fn index_action_matches_sequence_action() {
        for n in [1usize, 2, 5, 8, 13] {
            for x in [0u64, 1, 0b1011, (1u64 << n) - 1] {
                let x = x & full_mask(n);
                let s = SpinSequence::from_index(x, n).unwrap();
                for g in SymmetryAction::all() {
                    assert_eq!(g.apply(&s).index(), g.apply_index(x, n));
                }
            }
        }
    }

    #[test]
    fn flip_examples() {
        let s = seq("+++");
        let (d, a) = incremental_flip_delta(&s, &s.autocorrelations(), 2).unwrap();
        assert_eq!(d, -4);
        assert_eq!(5 + d, 1);
        assert_eq!(a, s.flipped(2).autocorrelations());
        let (d2, _) = incremental_flip_delta(&s.flipped(2), &a, 2).unwrap();
        assert_eq!(d + d2, 0);
    }

    #[test]
    fn stale_autocorrelations_are_detected() {
        let s = seq("++-+");
        let mut a = s.autocorrelations();
        a[0] += 2;
        let r = incremental_flip_delta(&s, &a, 1);
        if cfg!(debug_assertions) {
            assert!(matches!(r, Err(LabsError::Internal(_))));
        }
        assert!(incremental_flip_delta(&s, &s.autocorrelations(), 4).is_err());
    }

    #[test]
    fn incremental_matches_scratch_on_random_walks() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let x = rng.gen::<u64>() & full_mask(12);
            let mut state = FlipState::from_index(x, 12).unwrap();
            for _ in 0..1000 {
                let i = rng.gen_range(0..12);
                let predicted = state.energy() + state.delta(i);
                let e = state.flip(i);
                assert_eq!(e, predicted);
                assert_eq!(e, state.to_sequence().sidelobe_energy());
            }
        }
    }

    #[test]
    fn energy_table_small() {
        let t3 = EnergyTable::build(3, false).unwrap();
        assert_eq!(t3.min_energy(), 1);
        assert_eq!(t3.optimal_indices().len(), 4);
        let t4 = EnergyTable::build(4, false).unwrap();
        assert_eq!(t4.min_energy(), 2);
        for n in 1..=12 {
            let table = EnergyTable::build(n, false).unwrap();
            for (x, &e) in table.energies().iter().enumerate() {
                assert_eq!(e, energy_of_index(x as u64, n));
            }
        }
    }

    #[test]
    fn parallel_table_is_identical() {
        for n in [5, 9, 14] {
            assert_eq!(EnergyTable::build(n, false).unwrap(), EnergyTable::build(n, true).unwrap());
        }
    }

    #[test]
    fn optimal_set_is_orbit_closed() {
        for n in 3..=14 {
            let table = EnergyTable::build(n, true).unwrap();
            let opt = table.optimal_indices();
            for &x in opt {
                for y in orbit_of_index(x, n) {
                    assert!(opt.binary_search(&y).is_ok(), "N={n}");
                }
            }
        }
    }

    #[test]
    fn fundamental_domain_agrees_with_full_walk() {
        for n in 2..=14 {
            let full = exhaustive_ground_truth(n, false).unwrap();
            let reduced = exhaustive_ground_truth(n, true).unwrap();
            assert_eq!(full, reduced, "N={n}");
            let table = EnergyTable::build(n, false).unwrap();
            assert_eq!(full.0, table.min_energy());
            assert_eq!(full.1, table.optimal_indices());
        }
    }

    #[test]
    fn binary_round_trip_and_header() {
        let table = EnergyTable::build(6, false).unwrap();
        let mut bytes = Vec::new();
        table.write_binary(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"LABS");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 6);
        assert_eq!(bytes.len(), 8 + 64 * 8);
        assert_eq!(EnergyTable::read_binary(bytes.as_slice()).unwrap(), table);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(EnergyTable::read_binary(bad.as_slice()).is_err());
        assert!(EnergyTable::read_binary(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn summary_lists_hex_optima() {
        let s = EnergyTable::build(3, false).unwrap().summary();
        assert_eq!(s.optimal_count, 4);
        assert_eq!(s.min_energy, 1);
        assert!(s.optimal_bitstrings.iter().all(|h| h.len() == 1));
    }

    proptest! {
        #[test]
        fn text_formats_round_trip(n in 1usize..=40, raw in any::<u64>()) {
            let x = raw & full_mask(n);
            let s = SpinSequence::from_index(x, n).unwrap();
            prop_assert_eq!(SpinSequence::parse_pm(&s.to_pm_string()).unwrap(), s.clone());
            prop_assert_eq!(hex_to_index(&s.to_hex(), n).unwrap(), x);
        }

        #[test]
        fn energy_is_symmetric_and_merit_factor_consistent(n in 2usize..=24, raw in any::<u64>()) {
            let x = raw & full_mask(n);
            let s = SpinSequence::from_index(x, n).unwrap();
            let e = s.sidelobe_energy();
            prop_assert!(e >= 0);
            for g in SymmetryAction::all() {
                prop_assert_eq!(g.apply(&s).sidelobe_energy(), e);
            }
            if e > 0 {
                let back = s.merit_factor().unwrap() * 2.0 * e as f64;
                prop_assert!((back - (n * n) as f64).abs() <= 1e-12 * (n * n) as f64);
            }
        }
    }
}
