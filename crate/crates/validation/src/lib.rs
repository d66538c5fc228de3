//! Slow reference implementations written straight from the definitions,
//! used to check the fast paths in `labs`.
//!
//! Basis index `x` encodes spins by `s_j = 1 - 2 * bit(x, j - 1)`, which is
//! also the eigenvalue of `Z_j` on `|x>`.

use num_complex::Complex64;

fn spin(x: u64, j: usize) -> i64 {
    1 - 2 * ((x >> (j - 1)) & 1) as i64
}

/// `sum_k (sum_i s_i s_{i+k})^2` from the autocorrelation definition.
pub fn sidelobe_energy(n: usize, x: u64) -> i64 {
    (1..n)
        .map(|k| {
            let a: i64 = (1..=n - k).map(|i| spin(x, i) * spin(x, i + k)).sum();
            a * a
        })
        .sum()
}

/// The problem Hamiltonian evaluated on `|x>`, summed term by term over the
/// closed form with 1-based indices.
pub fn hamiltonian(n: usize, x: u64) -> i64 {
    let s = |j| spin(x, j);
    let mut four = 0;
    for i in 1..=n.saturating_sub(3) {
        for t in 1..=(n - i - 1) / 2 {
            for k in t + 1..=n - i - t {
                four += s(i) * s(i + t) * s(i + k) * s(i + k + t);
            }
        }
    }
    let mut two = 0;
    for i in 1..=n.saturating_sub(2) {
        for k in 1..=(n - i) / 2 {
            two += s(i) * s(i + 2 * k);
        }
    }
    2 * four + two
}

/// Row-major dense matrix.
#[derive(Clone, Debug)]
pub struct Dense {
    pub dim: usize,
    pub data: Vec<Complex64>,
}

impl Dense {
    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.dim);
        (0..self.dim).map(|r| self.data[r * self.dim..(r + 1) * self.dim].iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }
}

/// `exp(-i beta sum_j X_j)` as the Kronecker product of single-qubit
/// rotations, entry by entry.
pub fn mixer_matrix(n: usize, beta: f64) -> Dense {
    let (c, s) = (Complex64::new(beta.cos(), 0.0), Complex64::new(0.0, -beta.sin()));
    let dim = 1usize << n;
    let mut data = vec![Complex64::new(0.0, 0.0); dim * dim];
    for r in 0..dim {
        for col in 0..dim {
            let differ = (r ^ col).count_ones() as usize;
            data[r * dim + col] = c.powu((n - differ) as u32) * s.powu(differ as u32);
        }
    }
    Dense { dim, data }
}

/// `exp(-i gamma H)` as a dense diagonal matrix.
pub fn phase_matrix(n: usize, gamma: f64) -> Dense {
    let dim = 1usize << n;
    let mut data = vec![Complex64::new(0.0, 0.0); dim * dim];
    for x in 0..dim {
        data[x * dim + x] = Complex64::from_polar(1.0, -gamma * hamiltonian(n, x as u64) as f64);
    }
    Dense { dim, data }
}

/// QAOA state by dense matrix products, layer 1 applied first.
pub fn qaoa_state(n: usize, betas: &[f64], gammas: &[f64]) -> Vec<Complex64> {
    assert_eq!(betas.len(), gammas.len());
    let dim = 1usize << n;
    let mut v = vec![Complex64::new((dim as f64).sqrt().recip(), 0.0); dim];
    for (&b, &g) in betas.iter().zip(gammas) {
        v = phase_matrix(n, g).apply(&v);
        v = mixer_matrix(n, b).apply(&v);
    }
    v
}

/// `max_x |a_x e^{i phi} - b_x|` minimized over the global phase `phi`.
pub fn distance_up_to_phase(a: &[Complex64], b: &[Complex64]) -> f64 {
    let overlap: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    let phase = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { Complex64::new(1.0, 0.0) };
    a.iter().zip(b).map(|(x, y)| (x * phase - y).norm()).fold(0.0, f64::max)
}

pub fn max_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases_by_hand() {
        // N=3: ++- has A_1 = 0, A_2 = -1
        assert_eq!(sidelobe_energy(3, 0b100), 1);
        assert_eq!(sidelobe_energy(3, 0), 5);
        // N=3: H = s1 s3 only
        assert_eq!(hamiltonian(3, 0), 1);
        assert_eq!(hamiltonian(3, 0b001), -1);
        // N=4 all up: four-body s1 s2 s3 s4 once, two-body s1 s3 + s2 s4
        assert_eq!(hamiltonian(4, 0), 2 + 2);
    }

    #[test]
    fn mixer_is_unitary_and_trivial_at_zero() {
        let m = mixer_matrix(3, 0.37);
        for r in 0..8 {
            for c in 0..8 {
                let dot: Complex64 = (0..8).map(|k| m.data[r * 8 + k] * m.data[c * 8 + k].conj()).sum();
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((dot - want).norm() < 1e-12);
            }
        }
        let id = mixer_matrix(2, 0.0);
        assert!((0..16).all(|i| id.data[i] == if i % 5 == 0 { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) }));
    }
}
