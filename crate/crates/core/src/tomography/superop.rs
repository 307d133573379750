//! Dense superoperator representation of qubit channels with Pauli-transfer
//! and Choi conversions, CPTP projection, and process fidelity.
//!
//! Superoperators act on column-stacked density matrices: the vector index
//! runs over matrix rows first, so `vec(A X B) = (B^T (x) A) vec(X)` and the
//! unitary channel is `conj(U) (x) U`. Pauli strings are indexed in base 4
//! with letters I, X, Y, Z and the leftmost qubit as the most significant
//! digit.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg;
use crate::C64;

/// Iteration cap for the CPTP alternating projection.
pub const CPTP_MAX_ITER: usize = 10_000;
/// Frobenius fixed-point tolerance for the CPTP alternating projection.
pub const CPTP_TOL: f64 = 1e-8;

/// Dense channel representation on a `dim`-dimensional Hilbert space.
#[derive(Clone, Debug, PartialEq)]
pub struct Superoperator {
    dim: usize,
    matrix: Array2<C64>,
}

impl Superoperator {
    /// Wraps a `dim^2 x dim^2` matrix in the column-stacking convention.
    pub fn new(matrix: Array2<C64>) -> Result<Self> {
        let side = matrix.nrows();
        if matrix.ncols() != side {
            return Err(Error::InvalidInput("superoperator must be square".into()));
        }
        let dim = (side as f64).sqrt().round() as usize;
        if dim * dim != side || dim == 0 {
            return Err(Error::InvalidInput(format!(
                "superoperator side {side} is not a squared Hilbert dimension"
            )));
        }
        Ok(Superoperator { dim, matrix })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("Hilbert dimension must be positive".into()));
        }
        Ok(Superoperator { dim, matrix: Array2::eye(dim * dim) })
    }

    /// Channel `rho -> U rho U^dagger`.
    pub fn from_unitary(u: &Array2<C64>) -> Result<Self> {
        if u.nrows() != u.ncols() || u.nrows() == 0 {
            return Err(Error::InvalidInput("unitary must be square".into()));
        }
        let conj = u.mapv(|z| z.conj());
        Superoperator::new(ndarray::linalg::kron(&conj, u))
    }

    /// Channel `rho -> sum_k K_k rho K_k^dagger`.
    pub fn from_kraus(kraus: &[Array2<C64>]) -> Result<Self> {
        let first = kraus
            .first()
            .ok_or_else(|| Error::InvalidInput("need at least one Kraus operator".into()))?;
        let d = first.nrows();
        if d == 0 || first.ncols() != d {
            return Err(Error::InvalidInput("Kraus operators must be square".into()));
        }
        let mut m = Array2::<C64>::zeros((d * d, d * d));
        for k in kraus {
            if k.nrows() != d || k.ncols() != d {
                return Err(Error::InvalidInput("Kraus operators must share one shape".into()));
            }
            let conj = k.mapv(|z| z.conj());
            m += &ndarray::linalg::kron(&conj, k);
        }
        Superoperator::new(m)
    }

    /// Depolarizing channel `rho -> (1-p) rho + p Tr[rho] I / dim`.
    pub fn depolarizing(dim: usize, p: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("Hilbert dimension must be positive".into()));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("depolarizing strength {p} not in [0,1]")));
        }
        let mut m = Array2::<C64>::eye(dim * dim);
        m.mapv_inplace(|z| z * C64::new(1.0 - p, 0.0));
        for i in 0..dim {
            for j in 0..dim {
                m[(i * dim + i, j * dim + j)] += C64::new(p / dim as f64, 0.0);
            }
        }
        Superoperator::new(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    /// Applies the channel to a density matrix.
    pub fn apply(&self, rho: &Array2<C64>) -> Result<Array2<C64>> {
        let d = self.dim;
        if rho.nrows() != d || rho.ncols() != d {
            return Err(Error::InvalidInput(format!(
                "state is {}x{} but the channel dimension is {d}",
                rho.nrows(),
                rho.ncols()
            )));
        }
        let v = self.matrix.dot(&vec_matrix(rho));
        Ok(unvec_matrix(&v, d))
    }

    /// `self` applied after `rhs`.
    pub fn compose(&self, rhs: &Superoperator) -> Result<Superoperator> {
        if self.dim != rhs.dim {
            return Err(Error::InvalidInput(format!(
                "cannot compose channels of dimension {} and {}",
                self.dim, rhs.dim
            )));
        }
        Superoperator::new(self.matrix.dot(&rhs.matrix))
    }

    /// Choi matrix with the input system as the slow tensor factor;
    /// normalized so a trace-preserving channel has trace `dim`.
    pub fn to_choi(&self) -> Array2<C64> {
        reshuffle(&self.matrix, self.dim)
    }

    /// Inverse of [`Superoperator::to_choi`].
    pub fn from_choi(choi: &Array2<C64>) -> Result<Self> {
        let side = choi.nrows();
        if choi.ncols() != side {
            return Err(Error::InvalidInput("Choi matrix must be square".into()));
        }
        let dim = (side as f64).sqrt().round() as usize;
        if dim * dim != side || dim == 0 {
            return Err(Error::InvalidInput(format!(
                "Choi side {side} is not a squared Hilbert dimension"
            )));
        }
        Superoperator::new(reshuffle(choi, dim))
    }

    /// Largest deviation of the Choi partial output trace from identity.
    pub fn trace_preservation_error(&self) -> f64 {
        let choi = self.to_choi();
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                for m in 0..d {
                    acc += choi[(i * d + m, j * d + m)];
                }
                let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
                worst = worst.max((acc - target).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the Hermitized Choi matrix.
    pub fn choi_min_eigenvalue(&self) -> Result<f64> {
        let mut choi = self.to_choi();
        hermitize(&mut choi);
        let (w, _) = linalg::eigh(&choi)?;
        Ok(w.iter().fold(f64::INFINITY, |m, x| m.min(*x)))
    }

    /// Pauli transfer matrix `R[a,b] = Tr[P_a E(P_b)] / dim`; requires a
    /// power-of-two dimension.
    pub fn to_ptm(&self) -> Result<Array2<f64>> {
        let n = qubit_count(self.dim)?;
        let vecs = pauli_vecs(n);
        let side = vecs.len();
        let mut r = Array2::<f64>::zeros((side, side));
        for b in 0..side {
            let image = self.matrix.dot(&vecs[b]);
            for a in 0..side {
                let mut acc = C64::new(0.0, 0.0);
                for (x, y) in vecs[a].iter().zip(image.iter()) {
                    acc += x.conj() * y;
                }
                r[(a, b)] = acc.re / self.dim as f64;
            }
        }
        Ok(r)
    }

    /// Rebuilds the superoperator from a Pauli transfer matrix.
    pub fn from_ptm(r: &Array2<f64>) -> Result<Self> {
        let side = r.nrows();
        if r.ncols() != side {
            return Err(Error::InvalidInput("transfer matrix must be square".into()));
        }
        let mut n = 0usize;
        while 4usize.pow(n as u32) < side {
            n += 1;
        }
        if 4usize.pow(n as u32) != side || side == 1 {
            return Err(Error::InvalidInput(format!(
                "transfer matrix side {side} is not 4^n for qubits"
            )));
        }
        let dim = 1usize << n;
        let vecs = pauli_vecs(n);
        let mut m = Array2::<C64>::zeros((dim * dim, dim * dim));
        for a in 0..side {
            for b in 0..side {
                let w = C64::new(r[(a, b)] / dim as f64, 0.0);
                if w.norm() == 0.0 {
                    continue;
                }
                for (i, x) in vecs[a].iter().enumerate() {
                    if x.norm() == 0.0 {
                        continue;
                    }
                    for (j, y) in vecs[b].iter().enumerate() {
                        m[(i, j)] += w * x * y.conj();
                    }
                }
            }
        }
        Superoperator::new(m)
    }
}

/// Column-stacks a matrix: entry `(i, j)` lands at vector index `j*d + i`.
fn vec_matrix(a: &Array2<C64>) -> Array1<C64> {
    let d = a.nrows();
    let mut v = Array1::<C64>::zeros(d * d);
    for j in 0..d {
        for i in 0..d {
            v[j * d + i] = a[(i, j)];
        }
    }
    v
}

fn unvec_matrix(v: &Array1<C64>, d: usize) -> Array2<C64> {
    let mut a = Array2::<C64>::zeros((d, d));
    for j in 0..d {
        for i in 0..d {
            a[(i, j)] = v[j * d + i];
        }
    }
    a
}

/// Row-reshuffle between the superoperator and Choi index orders; applying
/// it twice returns the original matrix.
fn reshuffle(m: &Array2<C64>, d: usize) -> Array2<C64> {
    let side = d * d;
    let mut out = Array2::<C64>::zeros((side, side));
    for p in 0..side {
        for q in 0..side {
            out[((q % d) * d + p % d, (q / d) * d + p / d)] = m[(p, q)];
        }
    }
    out
}

fn hermitize(a: &mut Array2<C64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let h = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            a[(i, j)] = h;
            a[(j, i)] = h.conj();
        }
        a[(i, i)] = C64::new(a[(i, i)].re, 0.0);
    }
}

fn qubit_count(dim: usize) -> Result<usize> {
    let mut n = 0usize;
    while 1usize << n < dim {
        n += 1;
    }
    if 1usize << n != dim {
        return Err(Error::InvalidInput(format!(
            "dimension {dim} is not a power of two; Pauli indexing needs qubits"
        )));
    }
    Ok(n)
}

/// Dense matrix of the `index`-th Pauli string on `n` qubits; base-4 digits
/// with the leftmost qubit most significant.
pub fn pauli_string(index: usize, n: usize) -> Array2<C64> {
    let letters = [
        [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 0.0]],
        [[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 0.0]],
        [[0.0, 0.0], [0.0, -1.0], [0.0, 1.0], [0.0, 0.0]],
        [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [-1.0, 0.0]],
    ];
    let mut m = Array2::<C64>::eye(1);
    for q in 0..n {
        let digit = index / 4usize.pow((n - 1 - q) as u32) % 4;
        let flat = letters[digit];
        let mut p = Array2::<C64>::zeros((2, 2));
        p[(0, 0)] = C64::new(flat[0][0], flat[0][1]);
        p[(0, 1)] = C64::new(flat[1][0], flat[1][1]);
        p[(1, 0)] = C64::new(flat[2][0], flat[2][1]);
        p[(1, 1)] = C64::new(flat[3][0], flat[3][1]);
        m = ndarray::linalg::kron(&m, &p);
    }
    m
}

fn pauli_vecs(n: usize) -> Vec<Array1<C64>> {
    (0..4usize.pow(n as u32)).map(|a| vec_matrix(&pauli_string(a, n))).collect()
}

/// Re(Tr[S_U^dagger S_E]) / dim^2 without clipping.
pub fn process_fidelity_raw(e: &Superoperator, u: &Array2<C64>) -> Result<f64> {
    let target = Superoperator::from_unitary(u)?;
    if target.dim != e.dim {
        return Err(Error::InvalidInput(format!(
            "channel dimension {} does not match unitary dimension {}",
            e.dim, target.dim
        )));
    }
    let mut acc = C64::new(0.0, 0.0);
    for (x, y) in target.matrix.iter().zip(e.matrix.iter()) {
        acc += x.conj() * y;
    }
    Ok(acc.re / (e.dim * e.dim) as f64)
}

/// Process fidelity `Tr[S_U^dagger S_E] / dim^2`, clipped to `[0, 1]`.
pub fn process_fidelity(e: &Superoperator, u: &Array2<C64>) -> Result<f64> {
    Ok(process_fidelity_raw(e, u)?.clamp(0.0, 1.0))
}

/// Nearest channel (alternating projections with Dykstra correction in Choi
/// space) that is trace preserving and completely positive.
///
/// Converges to the Frobenius-nearest CPTP Choi matrix; errors with the
/// final step size if the iteration cap is hit first.
pub fn project_cptp(s: &Superoperator, tol: f64, max_iter: usize) -> Result<Superoperator> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidInput("projection needs tol > 0 and max_iter > 0".into()));
    }
    let d = s.dim;
    let mut x = s.to_choi();
    hermitize(&mut x);
    let side = d * d;
    let mut p = Array2::<C64>::zeros((side, side));
    let mut q = Array2::<C64>::zeros((side, side));
    let mut step = f64::INFINITY;
    for _ in 0..max_iter {
        let y = project_psd(&(&x + &p))?;
        p = &x + &p - &y;
        let x_next = project_tp(&(&y + &q), d);
        q = &y + &q - &x_next;
        step = linalg::frobenius(&(&x_next - &x));
        x = x_next;
        if step < tol {
            let candidate = Superoperator::from_choi(&x)?;
            let tp_err = candidate.trace_preservation_error();
            let min_eig = candidate.choi_min_eigenvalue()?;
            if tp_err < 1e-7 && min_eig > -1e-9 {
                return Ok(candidate);
            }
        }
    }
    Err(Error::NoConvergence(format!(
        "CPTP projection still moving by {step:.3e} after {max_iter} iterations"
    )))
}

fn project_psd(c: &Array2<C64>) -> Result<Array2<C64>> {
    let mut h = c.clone();
    hermitize(&mut h);
    let (w, v) = linalg::eigh(&h)?;
    let n = h.nrows();
    let mut out = Array2::<C64>::zeros((n, n));
    for k in 0..n {
        if w[k] <= 0.0 {
            continue;
        }
        let wk = C64::new(w[k], 0.0);
        for i in 0..n {
            let vik = v[(i, k)] * wk;
            for j in 0..n {
                out[(i, j)] += vik * v[(j, k)].conj();
            }
        }
    }
    Ok(out)
}

fn project_tp(c: &Array2<C64>, d: usize) -> Array2<C64> {
    let mut out = c.clone();
    hermitize(&mut out);
    for i in 0..d {
        for j in 0..d {
            let mut acc = C64::new(0.0, 0.0);
            for m in 0..d {
                acc += out[(i * d + m, j * d + m)];
            }
            let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            let fix = (target - acc) / d as f64;
            for m in 0..d {
                out[(i * d + m, j * d + m)] += fix;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::gates;
    use crate::linalg::{expm_i_hermitian, max_abs_diff};

    fn random_unitary(n: usize, rng: &mut ChaCha8Rng) -> Array2<C64> {
        let mut h = Array2::<C64>::zeros((n, n));
        for i in 0..n {
            h[(i, i)] = C64::new(rng.gen_range(-1.0..1.0), 0.0);
            for j in 0..i {
                let z = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                h[(i, j)] = z;
                h[(j, i)] = z.conj();
            }
        }
        expm_i_hermitian(&h, 1.0).unwrap()
    }

    fn random_density(d: usize, rng: &mut ChaCha8Rng) -> Array2<C64> {
        let mut a = Array2::<C64>::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                a[(i, j)] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        let g = crate::linalg::dagger(&a).dot(&a);
        let trace: C64 = (0..d).map(|i| g[(i, i)]).sum();
        g.mapv(|z| z / trace)
    }

    #[test]
    fn unitary_channel_applies_by_conjugation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let u = random_unitary(4, &mut rng);
            let s = Superoperator::from_unitary(&u).unwrap();
            let rho = random_density(4, &mut rng);
            let direct = u.dot(&rho).dot(&crate::linalg::dagger(&u));
            assert!(max_abs_diff(&s.apply(&rho).unwrap(), &direct) < 1e-12);
            assert!(s.trace_preservation_error() < 1e-12);
        }
    }

    #[test]
    fn composition_matches_sequential_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u1 = random_unitary(4, &mut rng);
        let u2 = random_unitary(4, &mut rng);
        let s1 = Superoperator::from_unitary(&u1).unwrap();
        let s2 = Superoperator::from_unitary(&u2).unwrap();
        let rho = random_density(4, &mut rng);
        let seq = s2.apply(&s1.apply(&rho).unwrap()).unwrap();
        let joint = s2.compose(&s1).unwrap().apply(&rho).unwrap();
        assert!(max_abs_diff(&seq, &joint) < 1e-12);
    }

    #[test]
    fn kraus_channel_sums_conjugations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = 0.1;
        let mut k0 = Array2::<C64>::eye(2);
        k0.mapv_inplace(|z| z * C64::new((1.0f64 - p).sqrt(), 0.0));
        let mut k1 = gates::pauli_z().matrix().clone();
        k1.mapv_inplace(|z| z * C64::new(p.sqrt(), 0.0));
        let s = Superoperator::from_kraus(&[k0.clone(), k1.clone()]).unwrap();
        let rho = random_density(2, &mut rng);
        let direct = k0.dot(&rho).dot(&crate::linalg::dagger(&k0))
            + k1.dot(&rho).dot(&crate::linalg::dagger(&k1));
        assert!(max_abs_diff(&s.apply(&rho).unwrap(), &direct) < 1e-12);
        assert!(s.trace_preservation_error() < 1e-12);
    }

    #[test]
    fn choi_reshuffle_is_an_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = random_unitary(4, &mut rng);
        let s = Superoperator::from_unitary(&u).unwrap();
        let back = Superoperator::from_choi(&s.to_choi()).unwrap();
        assert!(max_abs_diff(back.matrix(), s.matrix()) < 1e-13);
        let choi = s.to_choi();
        let trace: C64 = (0..16).map(|i| choi[(i, i)]).sum();
        assert_abs_diff_eq!(trace.re, 4.0, epsilon = 1e-10);
        assert!(s.choi_min_eigenvalue().unwrap() > -1e-10);
    }

    #[test]
    fn ptm_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let u = random_unitary(8, &mut rng);
        let s = Superoperator::from_unitary(&u).unwrap();
        let r = s.to_ptm().unwrap();
        for v in r.iter() {
            assert!(v.abs() < 1.0 + 1e-9);
        }
        assert_abs_diff_eq!(r[(0, 0)], 1.0, epsilon = 1e-12);
        for b in 1..64 {
            assert_abs_diff_eq!(r[(0, b)], 0.0, epsilon = 1e-12);
        }
        let back = Superoperator::from_ptm(&r).unwrap();
        assert!(max_abs_diff(back.matrix(), s.matrix()) < 1e-10);
    }

    #[test]
    fn identity_channel_has_identity_transfer_matrix() {
        let s = Superoperator::identity(4).unwrap();
        let r = s.to_ptm().unwrap();
        assert!((&r - &Array2::<f64>::eye(16)).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn process_fidelity_matches_the_trace_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let u = random_unitary(8, &mut rng);
        let s = Superoperator::from_unitary(&u).unwrap();
        assert_abs_diff_eq!(process_fidelity(&s, &u).unwrap(), 1.0, epsilon = 1e-12);

        let dep = Superoperator::depolarizing(8, 1.0).unwrap();
        assert_abs_diff_eq!(process_fidelity(&dep, &u).unwrap(), 1.0 / 64.0, epsilon = 1e-12);

        let v = random_unitary(8, &mut rng);
        let sv = Superoperator::from_unitary(&v).unwrap();
        let mut overlap = C64::new(0.0, 0.0);
        for i in 0..8 {
            for j in 0..8 {
                overlap += u[(j, i)].conj() * v[(j, i)];
            }
        }
        let expect = overlap.norm_sqr() / 64.0;
        assert_abs_diff_eq!(process_fidelity(&sv, &u).unwrap(), expect, epsilon = 1e-10);
    }

    #[test]
    fn depolarizing_mixes_toward_the_maximally_mixed_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let s = Superoperator::depolarizing(4, 0.3).unwrap();
        let rho = random_density(4, &mut rng);
        let out = s.apply(&rho).unwrap();
        let mut expect = rho.mapv(|z| z * C64::new(0.7, 0.0));
        for i in 0..4 {
            expect[(i, i)] += C64::new(0.3 / 4.0, 0.0);
        }
        assert!(max_abs_diff(&out, &expect) < 1e-12);
    }

    #[test]
    fn cptp_projection_fixes_physical_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let u = random_unitary(4, &mut rng);
        let s = Superoperator::from_unitary(&u).unwrap();
        let projected = project_cptp(&s, CPTP_TOL, CPTP_MAX_ITER).unwrap();
        assert!(max_abs_diff(projected.matrix(), s.matrix()) < 1e-6);
    }

    #[test]
    fn cptp_projection_repairs_a_perturbed_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let u = random_unitary(4, &mut rng);
        let s = Superoperator::from_unitary(&u).unwrap();
        let mut r = s.to_ptm().unwrap();
        for v in r.iter_mut() {
            *v += rng.gen_range(-0.02..0.02);
        }
        let noisy = Superoperator::from_ptm(&r).unwrap();
        assert!(
            noisy.trace_preservation_error() > 1e-4
                || noisy.choi_min_eigenvalue().unwrap() < -1e-4
        );
        let fixed = project_cptp(&noisy, CPTP_TOL, CPTP_MAX_ITER).unwrap();
        assert!(fixed.trace_preservation_error() < 1e-7);
        assert!(fixed.choi_min_eigenvalue().unwrap() > -1e-9);
        assert!(process_fidelity(&fixed, &u).unwrap() > 0.95);
    }

    #[test]
    fn dimension_checks_reject_mismatches() {
        assert!(Superoperator::new(Array2::<C64>::zeros((3, 3))).is_err());
        let s = Superoperator::identity(2).unwrap();
        assert!(s.apply(&Array2::<C64>::zeros((3, 3))).is_err());
        let bigger = Superoperator::identity(4).unwrap();
        assert!(s.compose(&bigger).is_err());
        assert!(Superoperator::depolarizing(4, 1.5).is_err());
        let qutrit = Superoperator::identity(3).unwrap();
        assert!(qutrit.to_ptm().is_err());
    }
}
