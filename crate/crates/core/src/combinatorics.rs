//! Method-of-types machinery: input types, type classes, conditional types
//! and constant-composition codebooks with an optional exhaustive packing
//! check.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use num_bigint::BigUint;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::numerics::{entropy, ln_factorial};

/// Default cap on the number of types `enumerate_types` will produce.
pub const DEFAULT_TYPE_CAP: usize = 1_000_000;
/// Largest blocklength for which type-class sizes are returned exactly.
pub const EXACT_SIZE_MAX_N: usize = 170;
/// Bounds on explicitly stored codebooks.
pub const MAX_EXPLICIT_MESSAGES: usize = 1 << 20;
const MAX_EXPLICIT_SYMBOLS: usize = 20_000_000;
/// Exhaustive regime of the group-average check.
pub const GROUP_CHECK_MAX_N: usize = 10;
pub const GROUP_CHECK_MAX_D: usize = 3;
/// Default number of resampling rounds for packing verification.
pub const DEFAULT_PACKING_RETRIES: usize = 200;

/// An input type, stored as symbol counts `n_x`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CompositionType {
    counts: Vec<usize>,
}

impl CompositionType {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.len() < 2 {
            return invalid("a composition needs at least two input symbols");
        }
        if counts.iter().sum::<usize>() == 0 {
            return invalid("a composition needs blocklength n >= 1");
        }
        Ok(Self { counts })
    }

    /// Type of a word over `{0, …, d−1}`.
    pub fn of_word(word: &[usize], d: usize) -> Result<Self> {
        let mut counts = vec![0; d];
        for &x in word {
            if x >= d {
                return invalid(format!("symbol {x} outside alphabet of size {d}"));
            }
            counts[x] += 1;
        }
        Self::new(counts)
    }

    pub fn n(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn d(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// `P(x) = n_x / n`.
    pub fn distribution(&self) -> Vec<f64> {
        let n = self.n() as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.distribution())
    }

    /// The sorted word `0^{n_0} 1^{n_1} …` of this type.
    pub fn canonical_word(&self) -> Vec<usize> {
        self.counts
            .iter()
            .enumerate()
            .flat_map(|(x, &c)| std::iter::repeat_n(x, c))
            .collect()
    }
}

/// All compositions of `n` into `d` parts in lexicographic order.
pub fn enumerate_types(n: usize, d: usize) -> Result<Vec<CompositionType>> {
    enumerate_types_with_cap(n, d, DEFAULT_TYPE_CAP)
}

pub fn enumerate_types_with_cap(n: usize, d: usize, cap: usize) -> Result<Vec<CompositionType>> {
    if n == 0 || d < 2 {
        return invalid(format!("need n >= 1 and d >= 2, got n={n}, d={d}"));
    }
    let count = number_of_types(n, d);
    if count > cap as f64 {
        return Err(Error::CapExceeded {
            what: "number of types",
            count,
            cap: cap as f64,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut current = vec![0usize; d];
    fn rec(pos: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<CompositionType>) {
        if pos + 1 == cur.len() {
            cur[pos] = left;
            out.push(CompositionType { counts: cur.clone() });
            return;
        }
        for c in 0..=left {
            cur[pos] = c;
            rec(pos + 1, left - c, cur, out);
        }
    }
    rec(0, n, &mut current, &mut out);
    Ok(out)
}

/// `|T_n(𝒳)| = C(n+d−1, d−1)` as a float.
pub fn number_of_types(n: usize, d: usize) -> f64 {
    (ln_factorial(n + d - 1) - ln_factorial(n) - ln_factorial(d - 1))
        .exp()
        .round()
}

/// Rounds a probability vector to the type of blocklength `n` closest in
/// total variation (largest-remainder rule, ties to the lowest index).
pub fn round_to_type(p: &[f64], n: usize) -> Result<CompositionType> {
    crate::numerics::check_distribution(p, p.len())?;
    if n == 0 {
        return invalid("blocklength must be >= 1");
    }
    let scaled: Vec<f64> = p.iter().map(|v| v * n as f64).collect();
    let mut counts: Vec<usize> = scaled.iter().map(|v| v.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..p.len()).collect();
    let rem = |i: usize| scaled[i] - scaled[i].floor();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (rem(a), rem(b));
        if (ra - rb).abs() <= 1e-12 {
            a.cmp(&b)
        } else {
            rb.partial_cmp(&ra).expect("finite remainders")
        }
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    CompositionType::new(counts)
}

/// Size of a type class and the normalising constant `c_{n,P}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeClassSize {
    /// `n! / Π n_x!`, present when `n ≤ 170`.
    #[serde(serialize_with = "serialize_big")]
    pub exact: Option<BigUint>,
    pub log_size: f64,
    /// `ln c_{n,P} = nH(P) − ln|T_P|`.
    pub log_c: f64,
    /// Whether `c_{n,P} ≤ |T_n(𝒳)|`.
    pub c_bound_holds: bool,
}

fn serialize_big<S: serde::Serializer>(v: &Option<BigUint>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(b) => s.serialize_str(&b.to_string()),
        None => s.serialize_none(),
    }
}

pub fn log_multinomial(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    ln_factorial(n) - counts.iter().map(|&c| ln_factorial(c)).sum::<f64>()
}

pub fn multinomial_exact(counts: &[usize]) -> BigUint {
    let mut result = BigUint::from(1u32);
    let mut total = 0u64;
    for &c in counts {
        // Multiply by C(total + c, c) incrementally; each step divides exactly.
        for i in 1..=c as u64 {
            total += 1;
            result *= total;
            result /= i;
        }
    }
    result
}

pub fn type_class_size(p: &CompositionType) -> TypeClassSize {
    let n = p.n();
    let log_size = log_multinomial(&p.counts);
    let log_c = n as f64 * p.entropy() - log_size;
    TypeClassSize {
        exact: (n <= EXACT_SIZE_MAX_N).then(|| multinomial_exact(&p.counts)),
        log_size,
        log_c,
        c_bound_holds: log_c <= number_of_types(n, p.d()).ln() + 1e-12,
    }
}

/// `M_n = max(2, ⌊e^{nR − n^{1/4}}⌋)` as a float (it may be astronomically large).
pub fn message_count(n: usize, rate: f64) -> f64 {
    let n = n as f64;
    (n * rate - n.powf(0.25)).exp().floor().max(2.0)
}

/// A joint type of a word pair `(x^n, x'^n)`, stored per reference symbol:
/// `rows[x][x']` counts positions with `x_i = x`, `x'_i = x'`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ConditionalType {
    rows: Vec<Vec<usize>>,
}

impl ConditionalType {
    pub fn of_pair(reference: &[usize], other: &[usize], d: usize) -> Self {
        assert_eq!(reference.len(), other.len(), "words must have equal length");
        let mut rows = vec![vec![0; d]; d];
        for (&a, &b) in reference.iter().zip(other) {
            rows[a][b] += 1;
        }
        Self { rows }
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    /// `V(x'|x) = δ_{x,x'}`.
    pub fn is_identity(&self) -> bool {
        self.rows
            .iter()
            .enumerate()
            .all(|(x, row)| row.iter().enumerate().all(|(y, &c)| x == y || c == 0))
    }

    /// `ln |T_V(x^n)| = Σ_x ln (n_x! / Π_{x'} v_x(x')!)`.
    pub fn log_shell_size(&self) -> f64 {
        self.rows.iter().map(|r| log_multinomial(r)).sum()
    }
}

/// Outcome of a packing verification pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PackingReport {
    pub rounds: usize,
    pub resampled: usize,
    pub violations: usize,
    pub shells_checked: usize,
    pub satisfied: bool,
}

/// A constant-composition codebook.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Codebook {
    composition: CompositionType,
    rate: f64,
    codewords: Vec<Vec<usize>>,
    packing: Option<PackingReport>,
}

impl Codebook {
    /// Validates distinctness and composition of explicitly given codewords.
    pub fn from_codewords(
        composition: CompositionType,
        rate: f64,
        codewords: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if codewords.is_empty() {
            return invalid("a codebook needs at least one codeword");
        }
        let mut seen = HashSet::new();
        for w in &codewords {
            if CompositionType::of_word(w, composition.d())? != composition {
                return invalid(format!("codeword {w:?} does not have composition {:?}", composition.counts));
            }
            if !seen.insert(w.clone()) {
                return invalid(format!("duplicate codeword {w:?}"));
            }
        }
        Ok(Self {
            composition,
            rate,
            codewords,
            packing: None,
        })
    }

    pub fn n(&self) -> usize {
        self.composition.n()
    }

    pub fn composition(&self) -> &CompositionType {
        &self.composition
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn messages(&self) -> usize {
        self.codewords.len()
    }

    pub fn codewords(&self) -> &[Vec<usize>] {
        &self.codewords
    }

    pub fn codeword(&self, i: usize) -> &[usize] {
        &self.codewords[i]
    }

    pub fn packing(&self) -> Option<&PackingReport> {
        self.packing.as_ref()
    }

    /// Line-oriented text form: `#` header lines, then one codeword per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let counts: Vec<String> = self.composition.counts.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(s, "# n {}", self.n());
        let _ = writeln!(s, "# composition {}", counts.join(" "));
        let _ = writeln!(s, "# rate {:?}", self.rate);
        let _ = writeln!(s, "# messages {}", self.messages());
        for w in &self.codewords {
            let line: Vec<String> = w.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut composition = None;
        let mut rate = None;
        let mut messages = None;
        let mut words = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::InvalidArgument(format!("line {}: {what}", lineno + 1));
            if let Some(header) = line.strip_prefix('#') {
                let mut parts = header.split_whitespace();
                match parts.next() {
                    Some("composition") => {
                        let counts = parts
                            .map(|p| p.parse::<usize>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|_| bad("bad composition"))?;
                        composition = Some(CompositionType::new(counts)?);
                    }
                    Some("rate") => {
                        rate = Some(
                            parts.next().and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| bad("bad rate"))?,
                        );
                    }
                    Some("messages") => {
                        messages = Some(
                            parts.next().and_then(|v| v.parse::<usize>().ok()).ok_or_else(|| bad("bad count"))?,
                        );
                    }
                    _ => {}
                }
                continue;
            }
            let word = line
                .split_whitespace()
                .map(|p| p.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("bad codeword symbol"))?;
            words.push(word);
        }
        let composition = composition.ok_or_else(|| Error::InvalidArgument("missing composition header".into()))?;
        if let Some(m) = messages {
            if m != words.len() {
                return invalid(format!("header declares {m} messages, found {}", words.len()));
            }
        }
        Self::from_codewords(composition, rate.unwrap_or(0.0), words)
    }
}

fn random_word(composition: &CompositionType, rng: &mut impl Rng) -> Vec<usize> {
    let mut w = composition.canonical_word();
    w.shuffle(rng);
    w
}

/// Every word of a type class, in lexicographic order.
pub fn enumerate_type_class(composition: &CompositionType, cap: usize) -> Result<Vec<Vec<usize>>> {
    let size = type_class_size(composition).log_size.exp();
    if size > cap as f64 {
        return Err(Error::CapExceeded {
            what: "type class size",
            count: size.round(),
            cap: cap as f64,
        });
    }
    let n = composition.n();
    let mut left = composition.counts.clone();
    let mut word = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(size.round() as usize);
    fn rec(n: usize, left: &mut [usize], word: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if word.len() == n {
            out.push(word.clone());
            return;
        }
        for x in 0..left.len() {
            if left[x] > 0 {
                left[x] -= 1;
                word.push(x);
                rec(n, left, word, out);
                word.pop();
                left[x] += 1;
            }
        }
    }
    rec(n, &mut left, &mut word, &mut out);
    Ok(out)
}

/// Draws `M_n = max(2, ⌊e^{nR − n^{1/4}}⌋)` distinct codewords uniformly
/// from `T_P`; with `verify`, enforces the packing inequality by resampling.
pub fn build_codebook(
    composition: &CompositionType,
    rate: f64,
    rng: &mut impl Rng,
    verify: bool,
) -> Result<Codebook> {
    let m = message_count(composition.n(), rate);
    let class = type_class_size(composition);
    if m > class.log_size.exp().round() {
        return Err(Error::CodebookTooLarge {
            messages: m,
            class_size: class.log_size.exp().round(),
        });
    }
    build_codebook_with_messages(composition, rate, m as usize, rng, verify)
}

/// As [`build_codebook`] with an explicit message count (`M ≥ 1`).
pub fn build_codebook_with_messages(
    composition: &CompositionType,
    rate: f64,
    messages: usize,
    rng: &mut impl Rng,
    verify: bool,
) -> Result<Codebook> {
    let n = composition.n();
    let class_size = type_class_size(composition).log_size.exp().round();
    if messages == 0 {
        return invalid("a codebook needs at least one message");
    }
    if messages as f64 > class_size {
        return Err(Error::CodebookTooLarge {
            messages: messages as f64,
            class_size,
        });
    }
    if messages > MAX_EXPLICIT_MESSAGES || messages.saturating_mul(n) > MAX_EXPLICIT_SYMBOLS {
        return Err(Error::CapExceeded {
            what: "explicit codebook size",
            count: messages as f64,
            cap: MAX_EXPLICIT_MESSAGES.min(MAX_EXPLICIT_SYMBOLS / n) as f64,
        });
    }
    let codewords = if 2.0 * messages as f64 >= class_size {
        // Dense regime: pick a uniform subset of the enumerated class.
        let all = enumerate_type_class(composition, MAX_EXPLICIT_MESSAGES * 2)?;
        let mut picked: Vec<usize> = index::sample(rng, all.len(), messages).into_vec();
        picked.sort_unstable();
        let mut chosen: Vec<Vec<usize>> = picked.into_iter().map(|i| all[i].clone()).collect();
        chosen.shuffle(rng);
        chosen
    } else {
        let mut seen = HashSet::with_capacity(messages);
        let mut out = Vec::with_capacity(messages);
        while out.len() < messages {
            let w = random_word(composition, rng);
            if seen.insert(w.clone()) {
                out.push(w);
            }
        }
        out
    };
    let mut book = Codebook {
        composition: composition.clone(),
        rate,
        codewords,
        packing: None,
    };
    if verify {
        let report = enforce_packing(&mut book, rng, DEFAULT_PACKING_RETRIES)?;
        book.packing = Some(report);
    }
    Ok(book)
}

/// Packing violations of a codebook: pairs `(codeword index, V)` with
/// `|T_V(x) ∩ (M̂∖{x})| > |T_V(x)| e^{−n(H(P)−R)}`, together with the
/// indices of the offending partners.
fn packing_violations(book: &Codebook) -> (Vec<Vec<usize>>, usize) {
    let n = book.n() as f64;
    let d = book.composition.d();
    let log_slack = -n * (book.composition.entropy() - book.rate);
    let mut offenders = Vec::new();
    let mut shells = 0;
    for (i, x) in book.codewords.iter().enumerate() {
        let mut shells_of_x: HashMap<ConditionalType, Vec<usize>> = HashMap::new();
        for (j, other) in book.codewords.iter().enumerate() {
            if i != j {
                shells_of_x
                    .entry(ConditionalType::of_pair(x, other, d))
                    .or_default()
                    .push(j);
            }
        }
        shells += shells_of_x.len();
        for (v, members) in shells_of_x {
            let allowed = (v.log_shell_size() + log_slack).exp();
            if members.len() as f64 > allowed * (1.0 + 1e-12) {
                offenders.push(members);
            }
        }
    }
    (offenders, shells)
}

/// Exhaustively checks the packing inequality over all occupied conditional
/// types (unoccupied shells satisfy it trivially), resampling offending
/// codewords until it holds or the retry cap is hit.
pub fn enforce_packing(
    book: &mut Codebook,
    rng: &mut impl Rng,
    max_rounds: usize,
) -> Result<PackingReport> {
    let m = book.messages();
    if (m as f64).powi(2) * book.n() as f64 > 5e8 {
        return Err(Error::CapExceeded {
            what: "packing verification work",
            count: (m as f64).powi(2) * book.n() as f64,
            cap: 5e8,
        });
    }
    let class_size = type_class_size(&book.composition).log_size.exp().round();
    let mut resampled = 0;
    for round in 0..=max_rounds {
        let (offenders, shells) = packing_violations(book);
        if offenders.is_empty() || round == max_rounds || m as f64 >= class_size {
            return Ok(PackingReport {
                rounds: round,
                resampled,
                violations: offenders.len(),
                shells_checked: shells,
                satisfied: offenders.is_empty(),
            });
        }
        let mut seen: HashSet<Vec<usize>> = book.codewords.iter().cloned().collect();
        let mut replace: Vec<usize> = offenders.iter().filter_map(|m| m.last().copied()).collect();
        replace.sort_unstable();
        replace.dedup();
        for j in replace {
            loop {
                let w = random_word(&book.composition, rng);
                if seen.insert(w.clone()) {
                    seen.remove(&book.codewords[j]);
                    book.codewords[j] = w;
                    resampled += 1;
                    break;
                }
            }
        }
    }
    unreachable!("loop returns on its last round")
}

/// Both sides of the group-average inequality at a pair `(x^n, x'^n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupAverageCheck {
    /// `Σ_{g∈S_{x^n}} P_{M̂}∘g(x'^n) / |S_{x^n}|`.
    pub lhs: f64,
    /// `P_{T_P}(x'^n) e^{n^{1/4}} / c_{n,P} = e^{−nH(P) + n^{1/4}}`.
    pub rhs: f64,
    pub ratio: f64,
}

/// Evaluates the stabilizer average of the codebook's uniform law at
/// `x'^n` relative to the reference word `x^n`. The stabilizer orbit of
/// `x'^n` is exactly its conditional-type shell `T_V(x^n)`, so the average is
/// `|T_V(x^n) ∩ M̂| / (|T_V(x^n)| M_n)`.
pub fn group_average_bound_check(
    book: &Codebook,
    reference: &[usize],
    other: &[usize],
) -> Result<GroupAverageCheck> {
    let n = book.n();
    let d = book.composition.d();
    if n > GROUP_CHECK_MAX_N || d > GROUP_CHECK_MAX_D {
        return Err(Error::CapExceeded {
            what: "group-average check size (n <= 10, d <= 3)",
            count: n as f64,
            cap: GROUP_CHECK_MAX_N as f64,
        });
    }
    for w in [reference, other] {
        if CompositionType::of_word(w, d)? != book.composition {
            return invalid("both words must lie in the codebook's type class");
        }
    }
    if reference == other {
        return invalid("the check applies to x'^n different from x^n");
    }
    let v = ConditionalType::of_pair(reference, other, d);
    let in_shell = book
        .codewords
        .iter()
        .filter(|c| ConditionalType::of_pair(reference, c, d) == v)
        .count();
    let lhs = in_shell as f64 / (v.log_shell_size().exp().round() * book.messages() as f64);
    let nf = n as f64;
    let rhs = (-nf * book.composition.entropy() + nf.powf(0.25)).exp();
    Ok(GroupAverageCheck {
        lhs,
        rhs,
        ratio: lhs / rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ty(c: &[usize]) -> CompositionType {
        CompositionType::new(c.to_vec()).unwrap()
    }

    #[test]
    fn type_counts_follow_stars_and_bars() {
        assert_eq!(enumerate_types(4, 2).unwrap().len(), 5);
        assert_eq!(enumerate_types(2, 3).unwrap().len(), 6);
        let all = enumerate_types(7, 3).unwrap();
        assert!(all.iter().all(|t| t.n() == 7));
        assert!(all.windows(2).all(|w| w[0] < w[1]), "lexicographic order");
        assert!(matches!(
            enumerate_types_with_cap(50, 4, 1000),
            Err(Error::CapExceeded { .. })
        ));
        assert!(enumerate_types(0, 2).is_err());
    }

    #[test]
    fn rounding_examples() {
        assert_eq!(round_to_type(&[0.5, 0.5], 4).unwrap(), ty(&[2, 2]));
        assert_eq!(round_to_type(&[1.0, 0.0], 9).unwrap(), ty(&[9, 0]));
        assert_eq!(round_to_type(&[0.5, 0.5], 3).unwrap(), ty(&[2, 1]));
    }

    fn tv(a: &CompositionType, p: &[f64]) -> f64 {
        a.distribution().iter().zip(p).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0
    }

    #[test]
    fn rounding_matches_brute_force() {
        let p = [1.0 / 3.0, 2.0 / 3.0];
        let best = enumerate_types(4, 2)
            .unwrap()
            .into_iter()
            .min_by(|a, b| tv(a, &p).partial_cmp(&tv(b, &p)).unwrap())
            .unwrap();
        assert_eq!(best, ty(&[1, 3]));
        assert_eq!(round_to_type(&p, 4).unwrap(), best);
    }

    #[test]
    fn class_sizes() {
        assert_eq!(type_class_size(&ty(&[2, 2])).exact.unwrap(), BigUint::from(6u32));
        assert_eq!(type_class_size(&ty(&[1, 3])).exact.unwrap(), BigUint::from(4u32));
        let s = type_class_size(&ty(&[10, 10]));
        // c = 2^20 / C(20,10) = 1048576 / 184756 ≈ 5.675 ≤ 21.
        assert_abs_diff_eq!(s.log_c.exp(), 1_048_576.0 / 184_756.0, epsilon = 1e-9);
        assert!(s.c_bound_holds);
        let big = type_class_size(&ty(&[100, 100]));
        assert!(big.exact.is_none());
        assert!(big.log_size > 0.0);
    }

    #[test]
    fn class_sizes_sum_to_d_to_the_n() {
        for d in 2..=3usize {
            for n in 1..=20usize {
                let total: BigUint = enumerate_types(n, d)
                    .unwrap()
                    .iter()
                    .map(|t| type_class_size(t).exact.unwrap())
                    .sum();
                assert_eq!(total, BigUint::from(d).pow(n as u32));
            }
        }
    }

    #[test]
    fn normalising_constant_identity() {
        for t in enumerate_types(12, 3).unwrap() {
            let s = type_class_size(&t);
            // ln P_{T_P}(x') − ln c = −nH(P) for x' ∈ T_P.
            let lhs = -s.log_size - s.log_c;
            let direct: f64 = t
                .counts()
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| c as f64 * (c as f64 / 12.0).ln())
                .sum();
            assert_abs_diff_eq!(lhs, direct, epsilon = 1e-10);
        }
    }

    #[test]
    fn small_codebook_is_distinct_and_reproducible() {
        let p = ty(&[2, 2]);
        // n = 4: M = ⌊e^{4R − √2}⌋ = 2 for R = 0.5.
        assert_eq!(message_count(4, 0.5), 2.0);
        let make = |seed| build_codebook(&p, 0.5, &mut ChaCha8Rng::seed_from_u64(seed), false).unwrap();
        let book = make(7);
        assert_eq!(book.messages(), 2);
        assert_ne!(book.codeword(0), book.codeword(1));
        assert_eq!(book, make(7));
        assert!(matches!(
            build_codebook(&p, 2.0, &mut ChaCha8Rng::seed_from_u64(1), false),
            Err(Error::CodebookTooLarge { .. })
        ));
    }

    #[test]
    fn verified_codebook_satisfies_packing_exhaustively() {
        let p = ty(&[4, 4]);
        let rate = 0.39;
        assert_eq!(message_count(8, rate), 4.0);
        for seed in 0..20 {
            let book = build_codebook(&p, rate, &mut ChaCha8Rng::seed_from_u64(seed), true).unwrap();
            let report = book.packing().unwrap();
            assert!(report.satisfied, "seed {seed}: {report:?}");
            // Independent oracle: enumerate every word of T_P, group by
            // conditional type relative to each codeword, and compare.
            let class = enumerate_type_class(&p, 1000).unwrap();
            let slack = (-8.0 * (2f64.ln() - rate)).exp();
            for x in book.codewords() {
                let mut shell_sizes: HashMap<ConditionalType, (usize, usize)> = HashMap::new();
                for w in &class {
                    let v = ConditionalType::of_pair(x, w, 2);
                    let e = shell_sizes.entry(v).or_default();
                    e.0 += 1;
                    if w != x && book.codewords().contains(w) {
                        e.1 += 1;
                    }
                }
                for (v, (size, hits)) in shell_sizes {
                    assert_abs_diff_eq!(v.log_shell_size().exp(), size as f64, epsilon = 1e-9);
                    assert!(hits as f64 <= size as f64 * slack + 1e-12, "shell {v:?}");
                }
            }
        }
    }

    #[test]
    fn codebook_text_round_trip() {
        let p = ty(&[3, 2, 1]);
        let book = build_codebook_with_messages(&p, 0.1, 5, &mut ChaCha8Rng::seed_from_u64(3), false).unwrap();
        let parsed = Codebook::from_text(&book.to_text()).unwrap();
        assert_eq!(parsed.codewords(), book.codewords());
        assert_eq!(parsed.rate(), book.rate());
        assert!(Codebook::from_text("# composition 1 1\n0 0\n").is_err());
    }

    fn brute_stabilizer_average(book: &Codebook, x: &[usize], other: &[usize]) -> f64 {
        // Average of P_{M̂}(g(x')) over all permutations g fixing x.
        let n = x.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let (mut hits, mut total) = (0.0, 0.0);
        fn next_perm(p: &mut [usize]) -> bool {
            let Some(i) = (0..p.len().saturating_sub(1)).rev().find(|&i| p[i] < p[i + 1]) else {
                return false;
            };
            let j = (i + 1..p.len()).rev().find(|&j| p[j] > p[i]).unwrap();
            p.swap(i, j);
            p[i + 1..].reverse();
            true
        }
        loop {
            if (0..n).all(|i| x[perm[i]] == x[i]) {
                total += 1.0;
                let moved: Vec<usize> = (0..n).map(|i| other[perm[i]]).collect();
                if book.codewords().contains(&moved) {
                    hits += 1.0;
                }
            }
            if !next_perm(&mut perm) {
                break;
            }
        }
        hits / total / book.messages() as f64
    }

    #[test]
    fn group_average_matches_brute_force_and_bound() {
        let p = ty(&[3, 3]);
        let book = build_codebook_with_messages(&p, 0.3, 3, &mut ChaCha8Rng::seed_from_u64(5), false).unwrap();
        let class = enumerate_type_class(&p, 100).unwrap();
        let x = book.codeword(0).to_vec();
        for w in class.iter().filter(|w| **w != x) {
            let c = group_average_bound_check(&book, &x, w).unwrap();
            assert_abs_diff_eq!(c.lhs, brute_stabilizer_average(&book, &x, w), epsilon = 1e-15);
            assert!(c.ratio.is_finite());
        }
    }

    #[test]
    fn group_average_bound_on_verified_codebook() {
        let p = ty(&[4, 4]);
        let book = build_codebook(&p, 0.39, &mut ChaCha8Rng::seed_from_u64(11), true).unwrap();
        let class = enumerate_type_class(&p, 100).unwrap();
        for x in book.codewords() {
            for w in class.iter().filter(|w| *w != x) {
                let c = group_average_bound_check(&book, x, w).unwrap();
                assert!(c.ratio <= 1.0 + 1e-12, "{c:?}");
            }
        }
    }

    #[test]
    fn full_codebook_and_single_message_edges() {
        let p = ty(&[2, 2]);
        let all = enumerate_type_class(&p, 100).unwrap();
        let full = Codebook::from_codewords(p.clone(), 0.3, all.clone()).unwrap();
        let c = group_average_bound_check(&full, &all[0], &all[3]).unwrap();
        assert!(c.ratio.is_finite() && c.lhs > 0.0);

        let single = Codebook::from_codewords(p, 0.0, vec![all[0].clone()]).unwrap();
        for w in &all[1..] {
            assert_eq!(group_average_bound_check(&single, &all[0], w).unwrap().lhs, 0.0);
        }
        let big = ty(&[6, 6]);
        let book = build_codebook_with_messages(&big, 0.1, 2, &mut ChaCha8Rng::seed_from_u64(1), false).unwrap();
        assert!(group_average_bound_check(&book, book.codeword(0), book.codeword(1)).is_err());
    }

    proptest! {
        #[test]
        fn codewords_keep_their_composition(counts in prop::collection::vec(0usize..6, 2..4), seed in 0u64..1000) {
            prop_assume!(counts.iter().sum::<usize>() >= 2);
            let p = CompositionType::new(counts).unwrap();
            let size = type_class_size(&p).log_size.exp().round() as usize;
            let m = size.min(5);
            let book = build_codebook_with_messages(&p, 0.1, m, &mut ChaCha8Rng::seed_from_u64(seed), false).unwrap();
            let distinct: HashSet<_> = book.codewords().iter().collect();
            prop_assert_eq!(distinct.len(), m);
            for w in book.codewords() {
                prop_assert_eq!(&CompositionType::of_word(w, p.d()).unwrap(), &p);
            }
        }

        #[test]
        fn rounding_is_tv_optimal(raw in prop::collection::vec(0.0f64..1.0, 2..4), n in 1usize..9) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let r = round_to_type(&p, n).unwrap();
            prop_assert_eq!(r.n(), n);
            let best = enumerate_types(n, p.len()).unwrap().iter().map(|t| tv(t, &p)).fold(f64::INFINITY, f64::min);
            prop_assert!(tv(&r, &p) <= best + 1e-12);
        }
    }
}
