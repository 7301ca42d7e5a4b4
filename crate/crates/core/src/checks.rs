//! Numerical self-checks of the propagators and of backpropagation.
//!
//! Each `*_case` routine draws one random instance from `seed` and returns
//! `Error::Invariant` describing the first violated property.

use rand::Rng;

use crate::densenet::{NetworkSpec, Theta};
use crate::error::{Error, Result};
use crate::quantum::{
    apply_superoperator, expm, expm_hermitian, heisenberg_hamiltonian, lindblad_generator, lindblad_propagator,
    propagate_closed, propagate_lindblad, tls_hamiltonian, ComplexMatrix, DensityMatrix, QuantumState, C64,
};
use crate::seed::{derive_seed, rng_from};
use crate::systems::{sample_instances, Family, Propagator, DEFAULT_DT};

pub const UNITARITY_TOL: f64 = 1e-10;
pub const ORACLE_TOL: f64 = 1e-10;
pub const NORM_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-9;
pub const COMPOSITION_TOL: f64 = 1e-9;
pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-5;
pub const FD_ABS_TOL: f64 = 1e-8;

const TAYLOR_TERMS: usize = 60;

fn fail<T>(msg: String) -> Result<T> {
    Err(Error::Invariant(msg))
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        fail(msg())
    }
}

/// exp(A) as a plain truncated power series.
pub fn taylor_expm(a: &ComplexMatrix, terms: usize) -> Result<ComplexMatrix> {
    let n = a.rows();
    let mut sum = ComplexMatrix::identity(n);
    let mut term = ComplexMatrix::identity(n);
    for k in 1..terms {
        term = term.matmul(a)?.scale_real(1.0 / k as f64);
        sum = sum.add(&term)?;
    }
    Ok(sum)
}

/// max |U†U − I|.
pub fn unitarity_error(u: &ComplexMatrix) -> Result<f64> {
    Ok(u.adjoint().matmul(u)?.max_abs_diff(&ComplexMatrix::identity(u.rows())))
}

/// Random Hermitian matrix with infinity norm uniform in [0, max_norm).
pub fn random_hermitian<R: Rng + ?Sized>(dim: usize, max_norm: f64, rng: &mut R) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(dim, dim);
    for i in 0..dim {
        m[(i, i)] = C64::new(rng.random_range(-1.0..1.0), 0.0);
        for j in i + 1..dim {
            let z = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    let norm = m.inf_norm();
    let target = rng.random_range(0.0..max_norm);
    m.scale_real(target / norm)
}

fn check_density(rho: &ComplexMatrix, what: &str) -> Result<()> {
    let tr = rho.trace();
    ensure((tr.re - 1.0).abs() <= TRACE_TOL && tr.im.abs() <= TRACE_TOL, || format!("{what}: trace {tr}"))?;
    let (vals, _) = rho.hermitian_part().eigh()?;
    ensure(vals[0] >= -POSITIVITY_TOL, || format!("{what}: eigenvalue {}", vals[0]))?;
    ensure(rho.is_hermitian(TRACE_TOL), || format!("{what}: not Hermitian"))
}

fn ket_distance(a: &QuantumState, b: &QuantumState) -> f64 {
    a.amplitudes().iter().zip(b.amplitudes()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Truncated-series oracle against both exponentials, for a random
/// Hermitian matrix of norm at most 2.
pub fn oracle_case(dim: usize, seed: u64) -> Result<()> {
    let mut rng = rng_from(seed);
    let h = random_hermitian(dim, 2.0, &mut rng);
    let t = rng.random_range(0.0..=1.0);
    let generator = h.scale(C64::new(0.0, -t));
    let oracle = taylor_expm(&generator, TAYLOR_TERMS)?;
    let d = expm_hermitian(&h, t)?.max_abs_diff(&oracle);
    ensure(d <= ORACLE_TOL, || format!("expm_hermitian vs series: {d:e}"))?;
    let d = expm(&generator)?.max_abs_diff(&oracle);
    ensure(d <= ORACLE_TOL, || format!("expm vs series: {d:e}"))
}

fn closed_case(h: &ComplexMatrix, dim: usize, seed: u64) -> Result<()> {
    let mut rng = rng_from(derive_seed(seed, "check", 0));
    let t = rng.random_range(0.0..=1.0);
    let u = expm_hermitian(h, t)?;
    let e = unitarity_error(&u)?;
    ensure(e <= UNITARITY_TOL, || format!("unitarity error {e:e} at t={t}"))?;
    let oracle = taylor_expm(&h.scale(C64::new(0.0, -t)), TAYLOR_TERMS)?;
    let d = u.max_abs_diff(&oracle);
    ensure(d <= ORACLE_TOL, || format!("propagator vs series: {d:e}"))?;

    let psi = QuantumState::haar_random(dim, &mut rng)?;
    let (a, b) = (rng.random_range(0.0..0.5), rng.random_range(0.0..0.5));
    let once = propagate_closed(&psi, h, a + b)?;
    let twice = propagate_closed(&propagate_closed(&psi, h, a)?, h, b)?;
    let norm: f64 = once.amplitudes().iter().map(|z| z.norm_sqr()).sum();
    ensure((norm - 1.0).abs() <= NORM_TOL, || format!("norm {norm}"))?;
    let d = ket_distance(&once, &twice);
    ensure(d <= COMPOSITION_TOL, || format!("composition error {d:e}"))
}

fn open_case(delta: f64, gamma: f64, seed: u64) -> Result<()> {
    let mut rng = rng_from(derive_seed(seed, "check", 0));
    // a mixed input: convex combination of two random pure states
    let p = rng.random_range(0.0..=1.0);
    let r1 = QuantumState::haar_random(2, &mut rng)?.projector();
    let r2 = QuantumState::haar_random(2, &mut rng)?.projector();
    let rho = DensityMatrix::new(r1.scale_real(p).add(&r2.scale_real(1.0 - p))?)?;

    let dt = rng.random_range(0.0..=1.0);
    let out = propagate_lindblad(&rho, delta, gamma, dt)?;
    check_density(out.matrix(), "one step")?;

    let steps = rng.random_range(1..20usize);
    let step = lindblad_propagator(delta, gamma, dt / steps as f64)?;
    let mut r = rho.clone();
    for _ in 0..steps {
        r = apply_superoperator(&step, &r)?;
        check_density(r.matrix(), "repeated steps")?;
    }
    let d = r.matrix().max_abs_diff(out.matrix());
    ensure(d <= COMPOSITION_TOL, || format!("composition error {d:e} over {steps} steps"))?;

    let oracle = taylor_expm(&lindblad_generator(delta, gamma)?.scale_real(dt), TAYLOR_TERMS)?;
    let d = lindblad_propagator(delta, gamma, dt)?.max_abs_diff(&oracle);
    ensure(d <= ORACLE_TOL, || format!("superoperator vs series: {d:e}"))
}

/// Every propagator property for one sampled instance of a dynamics family.
pub fn physics_case(family: Family, seed: u64) -> Result<()> {
    let inst = &sample_instances(family, 1, seed)?[0];
    let p = &inst.params;
    match family {
        Family::ClosedTls => closed_case(&tls_hamiltonian(p[0]), 2, seed)?,
        Family::Heisenberg2 => closed_case(&heisenberg_hamiltonian(p[0], p[1], p[2]), 4, seed)?,
        Family::OpenTls => open_case(p[0], p[1], seed)?,
        Family::GateConfig => return fail("gate configurations have no dynamics".into()),
    }
    match inst.propagator(DEFAULT_DT)? {
        Propagator::Unitary(u) => {
            let e = unitarity_error(&u)?;
            ensure(e <= UNITARITY_TOL, || format!("system propagator unitarity error {e:e}"))
        }
        Propagator::Superoperator(s) => {
            // Tr(S vec(rho)) = Tr(rho) column by column
            for basis in 0..4 {
                let col = s[(0, basis)] + s[(3, basis)];
                let expected = if basis == 0 || basis == 3 { 1.0 } else { 0.0 };
                let d = (col - C64::new(expected, 0.0)).norm();
                ensure(d <= TRACE_TOL, || format!("superoperator column {basis} trace off by {d:e}"))?;
            }
            Ok(())
        }
    }
}

/// Runs `physics_case` on `n` instances per dynamics family and `oracle_case`
/// on `n` matrices each of size 2 and 4.
pub fn physics_suite(n: usize, master: u64) -> Result<()> {
    for family in [Family::ClosedTls, Family::OpenTls, Family::Heisenberg2] {
        for i in 0..n {
            physics_case(family, derive_seed(master, family.name(), i as u64))
                .map_err(|e| Error::Invariant(format!("{} instance {i}: {e}", family.name())))?;
        }
    }
    for dim in [2, 4] {
        for i in 0..n {
            oracle_case(dim, derive_seed(master, "oracle", (dim * n + i) as u64))
                .map_err(|e| Error::Invariant(format!("{dim}x{dim} matrix {i}: {e}")))?;
        }
    }
    Ok(())
}

fn fd_close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= FD_ABS_TOL || diff <= FD_REL_TOL * analytic.abs().max(numeric.abs())
}

fn contracted(theta: &Theta, x: &[f64], eta: &[f64], upstream: &[f64]) -> Result<f64> {
    Ok(theta.forward(x, eta)?.iter().zip(upstream).map(|(a, b)| a * b).sum())
}

/// Backpropagated gradients against central differences over every weight,
/// bias and context coordinate, for random θ, x, η and upstream vector.
pub fn gradient_case(spec: NetworkSpec, x_len: usize, seed: u64) -> Result<()> {
    if x_len > spec.input_dim {
        return Err(Error::Dimension(format!("x_len {x_len} exceeds input width {}", spec.input_dim)));
    }
    let mut rng = rng_from(derive_seed(seed, "fd", 0));
    let mut theta = Theta::init(spec, seed)?;
    // Glorot init leaves biases at zero
    for p in theta.params_mut() {
        *p += 0.05 * rng.random_range(-1.0..1.0);
    }
    let eta_len = spec.input_dim - x_len;
    let x: Vec<f64> = (0..x_len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let eta: Vec<f64> = (0..eta_len).map(|_| rng.random_range(-2.0..2.0)).collect();
    let upstream: Vec<f64> = (0..spec.output_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let grads = theta.backward(&x, &eta, &upstream)?;

    let mut probe = theta.clone();
    for i in 0..theta.len() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + FD_STEP;
        let plus = contracted(&probe, &x, &eta, &upstream)?;
        probe.params_mut()[i] = orig - FD_STEP;
        let minus = contracted(&probe, &x, &eta, &upstream)?;
        probe.params_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        ensure(fd_close(grads.d_theta[i], numeric), || format!("theta[{i}]: {} vs {numeric}", grads.d_theta[i]))?;
    }
    for k in 0..eta_len {
        let mut e = eta.clone();
        e[k] += FD_STEP;
        let plus = contracted(&theta, &x, &e, &upstream)?;
        e[k] -= 2.0 * FD_STEP;
        let minus = contracted(&theta, &x, &e, &upstream)?;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        ensure(fd_close(grads.d_eta[k], numeric), || format!("eta[{k}]: {} vs {numeric}", grads.d_eta[k]))?;
    }
    Ok(())
}

/// `gradient_case` over `n` seeds.
pub fn gradient_suite(spec: NetworkSpec, x_len: usize, n: usize, master: u64) -> Result<()> {
    for i in 0..n {
        gradient_case(spec, x_len, derive_seed(master, "gradient", i as u64))
            .map_err(|e| Error::Invariant(format!("configuration {i}: {e}")))?;
    }
    Ok(())
}
