//! Reference constructions: DeVore's polynomial matrices over a prime field and
//! random column-regular binary matrices.

use rand::seq::index;

use crate::binary::BinaryMatrix;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeVoreParams {
    p: u64,
    degree: u32,
}

impl DeVoreParams {
    /// `p` must be prime and `1 <= degree < p`.
    pub fn new(p: u64, degree: u32) -> Result<Self> {
        if !is_prime(p) {
            return Err(Error::InvalidField(p));
        }
        if degree == 0 || u64::from(degree) >= p {
            return Err(Error::DegreeTooLarge { p, degree });
        }
        Ok(Self { p, degree })
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn rows(&self) -> usize {
        (self.p * self.p) as usize
    }

    pub fn columns(&self) -> usize {
        self.p.pow(self.degree + 1) as usize
    }
}

fn is_prime(p: u64) -> bool {
    if p < 2 {
        return false;
    }
    (2..).take_while(|d| d * d <= p).all(|d| !p.is_multiple_of(d))
}

/// `p² × p^{d+1}` matrix of polynomial graphs over `F_p`.
///
/// Row `x·p + y` is the point `(x, y)`. Column `c` is the polynomial whose
/// coefficients `(c_d, …, c_0)` are the base-`p` digits of `c`, most significant
/// first. Entry is 1 iff `P(x) ≡ y (mod p)`.
pub fn devore_matrix(params: DeVoreParams) -> BinaryMatrix {
    let p = params.p;
    let d = params.degree as usize;
    let supports = (0..params.columns() as u64)
        .map(|c| {
            // coeffs[k] = c_k
            let mut coeffs = vec![0u64; d + 1];
            let mut rest = c;
            for coeff in coeffs.iter_mut() {
                *coeff = rest % p;
                rest /= p;
            }
            (0..p)
                .map(|x| {
                    let y = coeffs.iter().rev().fold(0u64, |acc, &ck| (acc * x + ck) % p);
                    (x * p + y) as usize
                })
                .collect()
        })
        .collect();
    BinaryMatrix::from_supports(params.rows(), p as usize, supports)
        .expect("polynomial graphs have one point per x")
}

/// Each column's support is an independent uniform `r`-subset of `0..m`.
pub fn random_binary_matrix(m: usize, n: usize, r: usize, seed: u64) -> Result<BinaryMatrix> {
    if r == 0 || r > m {
        return Err(Error::InvalidWeight { m, r });
    }
    let mut rng = seed::rng(seed);
    let supports = (0..n)
        .map(|_| {
            let mut s = index::sample(&mut rng, m, r).into_vec();
            s.sort_unstable();
            s
        })
        .collect();
    BinaryMatrix::from_supports(m, r, supports)
}
