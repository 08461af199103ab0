//! Exact XY-mixer propagation by eigendecomposition of each weight sector.
//!
//! `H_M` is real symmetric and commutes with the Hamming weight, so it is
//! block diagonal over weight sectors. Diagonalising every sector once per
//! block turns each mixer layer into two dense real matrix products per
//! sector, independent of `beta`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

#[derive(Clone, Debug)]
pub struct XyMixerSpectrum {
    sectors: Vec<Sector>,
}

#[derive(Clone, Debug)]
struct Sector {
    /// Basis indices with this Hamming weight, ascending.
    states: Vec<usize>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl XyMixerSpectrum {
    pub fn new(size: usize, edges: &[(usize, usize)]) -> Self {
        let dim = 1usize << size;
        let mut by_weight: Vec<Vec<usize>> = vec![Vec::new(); size + 1];
        for z in 0..dim {
            by_weight[z.count_ones() as usize].push(z);
        }
        let sectors = by_weight
            .into_iter()
            .map(|states| {
                let d = states.len();
                let mut h = DMatrix::<f64>::zeros(d, d);
                for (col, &z) in states.iter().enumerate() {
                    for &(a, b) in edges {
                        if ((z >> a) ^ (z >> b)) & 1 == 1 {
                            let target = z ^ ((1 << a) | (1 << b));
                            let row = states.binary_search(&target).expect("same sector");
                            h[(row, col)] += 1.0;
                        }
                    }
                }
                let eig = SymmetricEigen::new(h);
                Sector {
                    states,
                    eigenvalues: eig.eigenvalues,
                    eigenvectors: eig.eigenvectors,
                }
            })
            .collect();
        Self { sectors }
    }

    /// `amps <- e^{-i beta H_M} amps`.
    pub fn evolve(&self, amps: &mut [Complex64], beta: f64) {
        for s in &self.sectors {
            let d = s.states.len();
            if d == 1 {
                let phase = Complex64::from_polar(1.0, -beta * s.eigenvalues[0]);
                amps[s.states[0]] *= phase;
                continue;
            }
            let re = DVector::from_iterator(d, s.states.iter().map(|&z| amps[z].re));
            let im = DVector::from_iterator(d, s.states.iter().map(|&z| amps[z].im));
            let c_re = s.eigenvectors.tr_mul(&re);
            let c_im = s.eigenvectors.tr_mul(&im);
            let mut r_re = DVector::zeros(d);
            let mut r_im = DVector::zeros(d);
            for k in 0..d {
                let c = Complex64::new(c_re[k], c_im[k]) * Complex64::from_polar(1.0, -beta * s.eigenvalues[k]);
                r_re[k] = c.re;
                r_im[k] = c.im;
            }
            let out_re = &s.eigenvectors * r_re;
            let out_im = &s.eigenvectors * r_im;
            for (k, &z) in s.states.iter().enumerate() {
                amps[z] = Complex64::new(out_re[k], out_im[k]);
            }
        }
    }
}
