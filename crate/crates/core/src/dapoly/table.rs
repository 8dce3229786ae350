//! Monomial bookkeeping shared by all polynomials of one algebra.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use super::AlgebraSpec;

/// Sentinel for "product exceeds the truncation order".
pub(crate) const TRUNCATED: u32 = u32::MAX;

/// Precomputed monomial index for a fixed `(order, nvars)` pair.
///
/// Monomials are stored in graded-lexicographic order: ascending total degree,
/// lexicographically descending exponent tuple within a degree. Index 0 is the
/// constant monomial. Exponent tuples are packed 4 bits per variable, which is
/// collision-free for `order <= 6` and `nvars <= 16`.
pub(crate) struct MonomialTable {
    pub spec: AlgebraSpec,
    /// Exponent tuple of each monomial, length `nvars`.
    pub exps: Vec<Vec<u8>>,
    /// Total degree of each monomial.
    pub degree: Vec<u8>,
    /// Packed exponent -> monomial index.
    index: HashMap<u64, u32>,
    /// Dense product table `i * len + j -> index`, built for small algebras.
    prod: Option<Vec<u32>>,
}

fn pack(exps: &[u8]) -> u64 {
    exps.iter()
        .enumerate()
        .fold(0u64, |k, (i, &e)| k | (e as u64) << (4 * i))
}

fn gen_exponents(nvars: usize, order: usize) -> Vec<Vec<u8>> {
    fn rec(remaining: usize, pos: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if pos + 1 == cur.len() {
            cur[pos] = remaining as u8;
            out.push(cur.clone());
            cur[pos] = 0;
            return;
        }
        for e in (0..=remaining).rev() {
            cur[pos] = e as u8;
            rec(remaining - e, pos + 1, cur, out);
        }
        cur[pos] = 0;
    }
    let mut out = Vec::new();
    let mut cur = vec![0u8; nvars];
    for deg in 0..=order {
        rec(deg, 0, &mut cur, &mut out);
    }
    out
}

impl MonomialTable {
    fn new(spec: AlgebraSpec) -> Self {
        let exps = gen_exponents(spec.nvars as usize, spec.order as usize);
        let degree: Vec<u8> = exps.iter().map(|e| e.iter().sum()).collect();
        let index: HashMap<u64, u32> = exps
            .iter()
            .enumerate()
            .map(|(i, e)| (pack(e), i as u32))
            .collect();
        let n = exps.len();
        // The dense product table costs n^2 u32; skip it for big algebras.
        let prod = (n <= 1024).then(|| {
            let mut prod = vec![TRUNCATED; n * n];
            for i in 0..n {
                for j in 0..n {
                    if degree[i] + degree[j] <= spec.order as u8 {
                        prod[i * n + j] = index[&(pack(&exps[i]) + pack(&exps[j]))];
                    }
                }
            }
            prod
        });
        MonomialTable {
            spec,
            exps,
            degree,
            index,
            prod,
        }
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    /// Index of the monomial with the given exponents, if within order.
    pub fn lookup(&self, exps: &[u8]) -> Option<u32> {
        self.index.get(&pack(exps)).copied()
    }

    /// Index of the product monomial `i * j`, or [`TRUNCATED`].
    pub fn product(&self, i: usize, j: usize) -> u32 {
        match &self.prod {
            Some(p) => p[i * self.len() + j],
            None => {
                if self.degree[i] + self.degree[j] > self.spec.order as u8 {
                    TRUNCATED
                } else {
                    self.index[&(pack(&self.exps[i]) + pack(&self.exps[j]))]
                }
            }
        }
    }
}

static CACHE: OnceLock<Mutex<HashMap<AlgebraSpec, Arc<MonomialTable>>>> = OnceLock::new();

/// Shared table for a spec; tables are immutable and cached for the process lifetime.
pub(crate) fn table_for(spec: AlgebraSpec) -> Arc<MonomialTable> {
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("monomial table cache poisoned");
    map.entry(spec)
        .or_insert_with(|| Arc::new(MonomialTable::new(spec)))
        .clone()
}
