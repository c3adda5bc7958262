//! Information capacity of spike-train state sets.
//!
//! The capacity of a finite point set `S ⊂ R^t` is `log2 |T(S)|`, where
//! `T(S)` is the set of threshold functions `x ↦ H(<a, x> + b)` restricted to
//! `S`. Counts here are exact: each labeling is tested for linear
//! separability with a phase-one simplex over arbitrary-precision rationals.

use num::{BigInt, BigRational, One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Largest point count whose `2^points` labelings the default oracle walks.
pub const DEFAULT_BUDGET_POINTS: usize = 16;
pub const MAX_EXACT_T: usize = 4;
pub const MAX_EXACT_N: usize = 4;

/// All `n^t` sequences over an ordered alphabet, in lexicographic order.
#[derive(Debug, Clone)]
pub struct StateCube {
    t: usize,
    alphabet: Vec<f64>,
    points: Vec<Vec<f64>>,
}

impl StateCube {
    pub fn new(t: usize, alphabet: &[f64]) -> Result<Self> {
        if t == 0 {
            return Err(Error::InvalidParam("t must be at least 1".into()));
        }
        if alphabet.len() < 2 {
            return Err(Error::InvalidParam("alphabet needs at least two states".into()));
        }
        if alphabet.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParam("alphabet values must be finite".into()));
        }
        for (i, a) in alphabet.iter().enumerate() {
            if alphabet[..i].contains(a) {
                return Err(Error::InvalidParam(format!(
                    "alphabet states must be distinct; {a} repeats"
                )));
            }
        }
        let n = alphabet.len();
        let count = n
            .checked_pow(t as u32)
            .filter(|&c| c <= 1 << 20)
            .ok_or_else(|| Error::InvalidParam(format!("{n}^{t} points is too many")))?;
        let points = (0..count)
            .map(|mut idx| {
                let mut p = vec![0.0; t];
                for slot in p.iter_mut().rev() {
                    *slot = alphabet[idx % n];
                    idx /= n;
                }
                p
            })
            .collect();
        Ok(StateCube {
            t,
            alphabet: alphabet.to_vec(),
            points,
        })
    }

    /// `{0, 1}^t`.
    pub fn binary(t: usize) -> Result<Self> {
        Self::new(t, &[0.0, 1.0])
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn n(&self) -> usize {
        self.alphabet.len()
    }

    pub fn alphabet(&self) -> &[f64] {
        &self.alphabet
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    fn check_budget(&self, allow_large: bool) -> Result<()> {
        if allow_large {
            return Ok(());
        }
        let m = self.points.len();
        if m > DEFAULT_BUDGET_POINTS || self.t > MAX_EXACT_T || self.n() > MAX_EXACT_N {
            return Err(Error::Budget {
                points: m,
                limit: DEFAULT_BUDGET_POINTS,
            });
        }
        Ok(())
    }

    pub fn within_budget(&self) -> bool {
        self.check_budget(false).is_ok()
    }

    fn rational_points(&self) -> Vec<Vec<BigRational>> {
        self.points
            .iter()
            .map(|p| {
                p.iter()
                    .map(|&x| BigRational::from_float(x).expect("finite by construction"))
                    .collect()
            })
            .collect()
    }
}

/// Decides whether some `(a, b)` gives `<a, x> + b >= 1` on `positive`
/// points and `<a, x> + b <= 0` on the rest. Scaling makes the margin-one
/// form equivalent to the strict/non-strict threshold condition.
pub fn is_separable(points: &[Vec<BigRational>], labels: &[bool]) -> bool {
    assert_eq!(points.len(), labels.len());
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return true;
    }
    let dim = points[0].len() + 1;
    // Columns: a+ (dim) | a- (dim) | slack (m) | artificial (one per positive row).
    let m = points.len();
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_struct = 2 * dim;
    let ncols = n_struct + m + n_pos;
    let zero = BigRational::zero();
    let one = BigRational::one();
    let mut tab: Vec<Vec<BigRational>> = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let mut art = n_struct + m;
    for (i, (p, &pos)) in points.iter().zip(labels).enumerate() {
        let mut row = vec![zero.clone(); ncols + 1];
        let coef: Vec<BigRational> = p.iter().cloned().chain(std::iter::once(one.clone())).collect();
        // Negative rows (<a,x>+b <= 0) keep their sign with slack basic;
        // positive rows are negated to -(<a,x>+b) + s = -1, then flipped.
        let sign = if pos { -one.clone() } else { one.clone() };
        for (j, c) in coef.iter().enumerate() {
            row[j] = &sign * c;
            row[dim + j] = -(&sign * c);
        }
        row[n_struct + i] = one.clone();
        if pos {
            for v in row.iter_mut() {
                *v = -v.clone();
            }
            row[ncols] = one.clone();
            row[art] = one.clone();
            basis.push(art);
            art += 1;
        } else {
            basis.push(n_struct + i);
        }
        tab.push(row);
    }
    let is_art = |j: usize| j >= n_struct + m;

    loop {
        // Reduced cost of column j for min sum(artificial): c_j - sum_{basic art rows} a_ij.
        let entering = (0..ncols).find(|&j| {
            if basis.contains(&j) {
                return false;
            }
            let mut d = if is_art(j) { one.clone() } else { zero.clone() };
            for (i, &b) in basis.iter().enumerate() {
                if is_art(b) {
                    d -= &tab[i][j];
                }
            }
            d.is_negative()
        });
        let Some(col) = entering else { break };
        let mut leave: Option<(usize, BigRational)> = None;
        for (i, row) in tab.iter().enumerate() {
            if row[col].is_positive() {
                let ratio = &row[ncols] / &row[col];
                let better = match &leave {
                    None => true,
                    Some((li, lr)) => ratio < *lr || (ratio == *lr && basis[i] < basis[*li]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        // Phase one is bounded below by zero, so a pivot row always exists.
        let (r, _) = leave.expect("phase-one LP is bounded");
        let piv = tab[r][col].clone();
        for v in tab[r].iter_mut() {
            *v /= &piv;
        }
        let pivot_row = tab[r].clone();
        for (i, row) in tab.iter_mut().enumerate() {
            if i == r || row[col].is_zero() {
                continue;
            }
            let f = row[col].clone();
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                if !pv.is_zero() {
                    *v -= &f * pv;
                }
            }
        }
        basis[r] = col;
    }
    basis
        .iter()
        .enumerate()
        .all(|(i, &b)| !is_art(b) || tab[i][ncols].is_zero())
}

/// Brute-force count of threshold functions: all `2^|points|` labelings,
/// each decided exactly.
pub fn count_threshold_functions(cube: &StateCube, allow_large: bool) -> Result<u64> {
    cube.check_budget(allow_large)?;
    let m = cube.points.len();
    if m >= 63 {
        return Err(Error::Budget {
            points: m,
            limit: 62,
        });
    }
    let pts = cube.rational_points();
    let total: u64 = (0..1usize << m)
        .into_par_iter()
        .with_min_len(64)
        .map(|mask| {
            let labels: Vec<bool> = (0..m).map(|i| mask >> i & 1 == 1).collect();
            u64::from(is_separable(&pts, &labels))
        })
        .sum();
    Ok(total)
}

/// Counts threshold functions by growing labelings one point at a time and
/// discarding non-separable prefixes. Agrees with
/// [`count_threshold_functions`] but scales with the answer rather than with
/// `2^|points|`.
pub fn count_threshold_functions_pruned(cube: &StateCube) -> u64 {
    let pts = cube.rational_points();
    let mut frontier: Vec<Vec<bool>> = vec![Vec::new()];
    for k in 0..pts.len() {
        let prefix = &pts[..=k];
        frontier = frontier
            .par_iter()
            .flat_map_iter(|labels| {
                [false, true].into_iter().filter_map(move |l| {
                    let mut next = labels.clone();
                    next.push(l);
                    is_separable(prefix, &next).then_some(next)
                })
            })
            .collect();
    }
    frontier.len() as u64
}

/// `1 + t^2 - t log2(t / e)`: capacity bound for `{0,1}^t`.
pub fn capacity_bound_binary(t: usize) -> Result<f64> {
    if t < 1 {
        return Err(Error::InvalidParam("t must be at least 1".into()));
    }
    let t = t as f64;
    Ok(1.0 + t * t - t * (t / std::f64::consts::E).log2())
}

/// `1 + t^2 log2(n) - t log2(t / e)`: capacity bound for `n` states per step.
pub fn capacity_bound_nstate(t: usize, n: usize) -> Result<f64> {
    if t < 1 || n < 2 {
        return Err(Error::InvalidParam(format!("need t >= 1 and n >= 2, got t={t}, n={n}")));
    }
    let t = t as f64;
    Ok(1.0 + t * t * (n as f64).log2() - t * (t / std::f64::consts::E).log2())
}

fn binom(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

fn log2_big(x: &BigInt) -> f64 {
    let bits = x.bits();
    if bits <= 1000 {
        x.to_f64().expect("fits").log2()
    } else {
        let shift = bits - 64;
        (x >> shift).to_f64().expect("fits").log2() + shift as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneralBound {
    /// `log2(2 * sum_{k=0}^{t-1} C(m-1, k))`.
    pub binomial_sum: f64,
    /// `1 + t log2(e m / t)`.
    pub relaxed: f64,
    /// `log2(2 * sum_{k=0}^{t} C(m-1, k))`: the same count for affine
    /// separators, which carry `t + 1` free coefficients.
    pub binomial_sum_affine: f64,
}

/// Region-counting bounds for a set of `m` points in `R^t`.
pub fn capacity_bound_general(m: usize, t: usize) -> Result<GeneralBound> {
    if m < 1 || t < 1 {
        return Err(Error::InvalidParam(format!("need m >= 1 and t >= 1, got m={m}, t={t}")));
    }
    let sum_to = |upper: usize| -> BigInt {
        (0..upper as u64).map(|k| binom(m as u64 - 1, k)).sum::<BigInt>() * 2
    };
    let (m_f, t_f) = (m as f64, t as f64);
    Ok(GeneralBound {
        binomial_sum: log2_big(&sum_to(t)),
        relaxed: 1.0 + t_f * (std::f64::consts::E * m_f / t_f).log2(),
        binomial_sum_affine: log2_big(&sum_to(t + 1)),
    })
}

/// Alphabet `{0, 1, κ, κ², …}` with `n` states.
pub fn burst_alphabet(n: usize, kappa: f64) -> Vec<f64> {
    let mut a = vec![0.0, 1.0];
    let mut k = kappa;
    while a.len() < n {
        a.push(k);
        k *= kappa;
    }
    a.truncate(n);
    a
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityReport {
    pub t: usize,
    pub n: usize,
    pub alphabet: Vec<f64>,
    pub points: usize,
    pub exact_count: Option<u64>,
    pub exact_capacity: Option<f64>,
    pub bound: f64,
    pub binomial: GeneralBound,
    /// No exact count contradicts `bound`.
    pub satisfied: bool,
}

impl CapacityReport {
    pub fn compute(t: usize, alphabet: &[f64], exact: ExactPolicy) -> Result<Self> {
        let cube = StateCube::new(t, alphabet)?;
        let exact_count = match exact {
            ExactPolicy::WithinBudget if cube.within_budget() => Some(count_threshold_functions(&cube, false)?),
            ExactPolicy::WithinBudget => None,
            ExactPolicy::Require => Some(count_threshold_functions(&cube, false)?),
            ExactPolicy::Large if cube.within_budget() => Some(count_threshold_functions(&cube, false)?),
            ExactPolicy::Large => Some(count_threshold_functions_pruned(&cube)),
        };
        let bound = capacity_bound_nstate(t, cube.n())?;
        let exact_capacity = exact_count.map(|c| (c as f64).log2());
        Ok(CapacityReport {
            t,
            n: cube.n(),
            alphabet: alphabet.to_vec(),
            points: cube.points.len(),
            exact_count,
            exact_capacity,
            bound,
            binomial: capacity_bound_general(cube.points.len(), t)?,
            satisfied: exact_capacity.map_or(true, |c| c <= bound),
        })
    }
}

/// Which cells of a capacity table receive an exact count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExactPolicy {
    /// Exact where the default enumeration budget allows, blank elsewhere.
    WithinBudget,
    /// Every cell must be exact within budget; otherwise error.
    Require,
    /// Every cell exact; over-budget cells use the pruned enumerator.
    Large,
}

/// Capacity table over `t = 1..=t_max` and each alphabet size in `n_list`.
pub fn capacity_curve(t_max: usize, n_list: &[usize], kappa: f64, exact: ExactPolicy) -> Result<Vec<CapacityReport>> {
    let mut rows = Vec::new();
    for &n in n_list {
        for t in 1..=t_max {
            rows.push(CapacityReport::compute(t, &burst_alphabet(n, kappa), exact)?);
        }
    }
    Ok(rows)
}

pub const CSV_HEADER: [&str; 11] = [
    "t",
    "n",
    "alphabet",
    "points",
    "exact_count",
    "exact_capacity",
    "bound",
    "binomial_sum",
    "binomial_sum_affine",
    "relaxed",
    "satisfied",
];

pub fn write_csv<W: std::io::Write>(rows: &[CapacityReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        let alphabet = r.alphabet.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(";");
        w.write_record([
            r.t.to_string(),
            r.n.to_string(),
            alphabet,
            r.points.to_string(),
            r.exact_count.map(|c| c.to_string()).unwrap_or_default(),
            r.exact_capacity.map(|c| format!("{c:.6}")).unwrap_or_default(),
            format!("{:.6}", r.bound),
            format!("{:.6}", r.binomial.binomial_sum),
            format!("{:.6}", r.binomial.binomial_sum_affine),
            format!("{:.6}", r.binomial.relaxed),
            r.satisfied.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::format("csv", e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rat_points(pts: &[&[f64]]) -> Vec<Vec<BigRational>> {
        pts.iter()
            .map(|p| p.iter().map(|&x| BigRational::from_float(x).unwrap()).collect())
            .collect()
    }

    #[test]
    fn xor_is_not_separable() {
        let pts = rat_points(&[&[0.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]]);
        assert!(!is_separable(&pts, &[false, true, true, false]));
        assert!(!is_separable(&pts, &[true, false, false, true]));
        assert!(is_separable(&pts, &[false, false, false, true]));
        assert!(is_separable(&pts, &[false, true, true, true]));
    }

    #[test]
    fn cube_is_lexicographic_and_distinct() {
        let c = StateCube::new(2, &[0.0, 1.0, 1.5]).unwrap();
        assert_eq!(c.points().len(), 9);
        assert_eq!(c.points()[1], vec![0.0, 1.0]);
        assert_eq!(c.points()[3], vec![1.0, 0.0]);
        assert!(StateCube::new(2, &[0.0, 1.0, 1.0]).is_err());
        assert!(StateCube::new(0, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn small_binary_counts() {
        assert_eq!(count_threshold_functions(&StateCube::binary(1).unwrap(), false).unwrap(), 4);
        assert_eq!(count_threshold_functions(&StateCube::binary(2).unwrap(), false).unwrap(), 14);
    }

    #[test]
    fn budget_is_enforced() {
        let cube = StateCube::new(3, &[0.0, 1.0, 1.5]).unwrap();
        let err = count_threshold_functions(&cube, false).unwrap_err();
        assert!(matches!(err, Error::Budget { points: 27, .. }));
        assert!(err.to_string().contains("--allow-large"));
    }

    #[test]
    fn bound_values() {
        assert!((capacity_bound_binary(1).unwrap() - (2.0 + std::f64::consts::LOG2_E)).abs() < 1e-12);
        assert!((capacity_bound_binary(2).unwrap() - 5.8854).abs() < 1e-4);
        assert!((capacity_bound_nstate(2, 3).unwrap() - 8.2253).abs() < 1e-4);
        assert!(capacity_bound_binary(0).is_err());
        assert!(capacity_bound_nstate(1, 1).is_err());
        assert!(capacity_bound_general(0, 1).is_err());
    }

    #[test]
    fn general_bound_unit_case() {
        let g = capacity_bound_general(1, 1).unwrap();
        assert_eq!(g.binomial_sum, 1.0);
    }

    #[test]
    fn burst_alphabet_shapes() {
        assert_eq!(burst_alphabet(2, 1.5), vec![0.0, 1.0]);
        assert_eq!(burst_alphabet(4, 1.5), vec![0.0, 1.0, 1.5, 2.25]);
    }
}
