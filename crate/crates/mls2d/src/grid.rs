//! Periodic spectral discretization of ℝ²: the shared field substrate.
//!
//! The box is [−L, L)² with N×N points (N a power of two) and wavenumber
//! lattice k_n = πn/L, n ∈ {−N/2, …, N/2−1}².  Transforms follow the
//! continuum convention F[f](k) = ∫ f e^{−ik·x} dx, so a discrete hat equals
//! h² (−1)^{n₁+n₂} · DFT and inner products read
//! ⟨f, g⟩ = (2π)^{−2} Σ_k f̂ ḡ Δk² with Δk = π/L.
//!
//! Vector fields carry a solenoidal flag; the projector is the Fourier
//! multiplier 𝒫̂a(k) = â − (â·k)k/|k|² = (â·Jk)Jk/|k|² with 𝒫̂a(0) := 0
//! (exact here, since all sources have ρ̂(0) = 0).

use num_complex::Complex64 as C;
use rustfft::FftPlanner;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::density::RadialDensity;

/// Periodic N×N spectral grid on [−L, L)².
pub struct SpectralGrid {
    n: usize,
    half_length: f64,
    fwd: Arc<dyn rustfft::Fft<f64>>,
    inv: Arc<dyn rustfft::Fft<f64>>,
    /// Wavenumber per axis index in FFT storage order.
    k_axis: Vec<f64>,
}

impl std::fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("n", &self.n)
            .field("half_length", &self.half_length)
            .finish()
    }
}

impl SpectralGrid {
    pub fn new(n: usize, half_length: f64) -> Arc<SpectralGrid> {
        assert!(n.is_power_of_two() && n >= 4, "N must be a power of two");
        assert!(half_length > 0.0);
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let k_axis = (0..n)
            .map(|i| {
                let s = if i < n / 2 { i as isize } else { i as isize - n as isize };
                std::f64::consts::PI * s as f64 / half_length
            })
            .collect();
        Arc::new(SpectralGrid { n, half_length, fwd, inv, k_axis })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    /// Real-space spacing h = 2L/N.
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_length / self.n as f64
    }

    /// Spectral spacing Δk = π/L.
    pub fn dk(&self) -> f64 {
        std::f64::consts::PI / self.half_length
    }

    /// The factor (Δk/2π)² = (2L)^{−2} converting spectral sums to pairings.
    pub fn pairing_weight(&self) -> f64 {
        1.0 / (4.0 * self.half_length * self.half_length)
    }

    pub fn modes(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        ix * self.n + iy
    }

    /// Wavevector of the linear mode index.
    #[inline]
    pub fn k_at(&self, idx: usize) -> [f64; 2] {
        [self.k_axis[idx / self.n], self.k_axis[idx % self.n]]
    }

    /// Real-space point of the linear index: x = −L + j·h per axis.
    #[inline]
    pub fn x_at(&self, idx: usize) -> [f64; 2] {
        let h = self.spacing();
        let (ix, iy) = (idx / self.n, idx % self.n);
        [-self.half_length + ix as f64 * h, -self.half_length + iy as f64 * h]
    }

    /// Forward transform of one real scalar component (continuum-normalized).
    pub fn forward(&self, real: &[f64]) -> Vec<C> {
        assert_eq!(real.len(), self.modes());
        let mut buf: Vec<C> = real.iter().map(|&v| C::new(v, 0.0)).collect();
        self.fft2(&mut buf, false);
        let h2 = self.spacing() * self.spacing();
        for ix in 0..self.n {
            for iy in 0..self.n {
                let sign = if (ix + iy) % 2 == 0 { h2 } else { -h2 };
                buf[ix * self.n + iy] *= sign;
            }
        }
        buf
    }

    /// Inverse transform back to real space (imaginary parts discarded; they
    /// are round-off for hats of real fields).
    pub fn backward(&self, hat: &[C]) -> Vec<f64> {
        assert_eq!(hat.len(), self.modes());
        let mut buf: Vec<C> = hat.to_vec();
        for ix in 0..self.n {
            for iy in 0..self.n {
                if (ix + iy) % 2 == 1 {
                    buf[ix * self.n + iy] = -buf[ix * self.n + iy];
                }
            }
        }
        self.fft2(&mut buf, true);
        let w = self.pairing_weight();
        buf.iter().map(|c| c.re * w).collect()
    }

    /// In-place 2D FFT: rows, then columns via transpose.
    fn fft2(&self, data: &mut [C], inverse: bool) {
        let n = self.n;
        let plan = if inverse { &self.inv } else { &self.fwd };
        for row in data.chunks_exact_mut(n) {
            plan.process(row);
        }
        let mut t = vec![C::new(0.0, 0.0); n * n];
        for ix in 0..n {
            for iy in 0..n {
                t[iy * n + ix] = data[ix * n + iy];
            }
        }
        for row in t.chunks_exact_mut(n) {
            plan.process(row);
        }
        for ix in 0..n {
            for iy in 0..n {
                data[ix * n + iy] = t[iy * n + ix];
            }
        }
    }
}

/// Two-component real vector field, stored spectrally.
#[derive(Clone)]
pub struct Field2 {
    pub grid: Arc<SpectralGrid>,
    pub hat: [Vec<C>; 2],
    pub solenoidal: bool,
}

impl std::fmt::Debug for Field2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Field2")
            .field("n", &self.grid.n())
            .field("solenoidal", &self.solenoidal)
            .finish()
    }
}

impl Field2 {
    pub fn zeros(grid: &Arc<SpectralGrid>) -> Field2 {
        let z = vec![C::new(0.0, 0.0); grid.modes()];
        Field2 { grid: grid.clone(), hat: [z.clone(), z], solenoidal: true }
    }

    pub fn from_real(grid: &Arc<SpectralGrid>, comp: [&[f64]; 2]) -> Field2 {
        Field2 {
            grid: grid.clone(),
            hat: [grid.forward(comp[0]), grid.forward(comp[1])],
            solenoidal: false,
        }
    }

    pub fn to_real(&self) -> [Vec<f64>; 2] {
        [self.grid.backward(&self.hat[0]), self.grid.backward(&self.hat[1])]
    }

    /// Solenoidal projection 𝒫̂a = â − (â·k)k/|k|²; zero mode annihilated.
    pub fn project_solenoidal(&self) -> Field2 {
        let mut out = self.clone();
        out.project_solenoidal_in_place();
        out
    }

    pub fn project_solenoidal_in_place(&mut self) {
        for idx in 0..self.grid.modes() {
            let k = self.grid.k_at(idx);
            let k2 = k[0] * k[0] + k[1] * k[1];
            if k2 == 0.0 {
                self.hat[0][idx] = C::new(0.0, 0.0);
                self.hat[1][idx] = C::new(0.0, 0.0);
                continue;
            }
            let dot = (self.hat[0][idx] * k[0] + self.hat[1][idx] * k[1]) / k2;
            self.hat[0][idx] -= dot * k[0];
            self.hat[1][idx] -= dot * k[1];
        }
        self.solenoidal = true;
    }

    /// Max |k·F̂| over modes, relative to the spectral norm — the solenoidal
    /// residual of the type invariant.
    pub fn divergence_residual(&self) -> f64 {
        let mut max_div = 0.0_f64;
        let mut norm = 0.0_f64;
        for idx in 0..self.grid.modes() {
            let k = self.grid.k_at(idx);
            let d = (self.hat[0][idx] * k[0] + self.hat[1][idx] * k[1]).norm();
            max_div = max_div.max(d);
            norm += self.hat[0][idx].norm_sqr() + self.hat[1][idx].norm_sqr();
        }
        let scale = norm.sqrt() * self.grid.dk();
        if scale == 0.0 {
            0.0
        } else {
            max_div / scale
        }
    }

    /// L² pairing ⟨F, G⟩ = (2π)^{−2} Σ_k F̂·conj(Ĝ) Δk² (real by symmetry).
    pub fn inner(&self, other: &Field2) -> f64 {
        assert_eq!(self.grid.n(), other.grid.n());
        let mut acc = 0.0;
        for c in 0..2 {
            for (a, b) in self.hat[c].iter().zip(&other.hat[c]) {
                acc += (a * b.conj()).re;
            }
        }
        acc * self.grid.pairing_weight()
    }

    /// ‖F‖_{L²}.
    pub fn l2_norm(&self) -> f64 {
        self.inner(self).max(0.0).sqrt()
    }

    /// ‖∇F‖²_{L²} = (2π)^{−2} Σ k²|F̂|² Δk².
    pub fn grad_norm_sqr(&self) -> f64 {
        let mut acc = 0.0;
        for idx in 0..self.grid.modes() {
            let k = self.grid.k_at(idx);
            let k2 = k[0] * k[0] + k[1] * k[1];
            acc += k2 * (self.hat[0][idx].norm_sqr() + self.hat[1][idx].norm_sqr());
        }
        acc * self.grid.pairing_weight()
    }

    pub fn scale(&mut self, s: f64) {
        for c in 0..2 {
            for v in &mut self.hat[c] {
                *v *= s;
            }
        }
    }

    /// self += s·other.
    pub fn add_scaled(&mut self, s: f64, other: &Field2) {
        assert_eq!(self.grid.n(), other.grid.n());
        for c in 0..2 {
            for (a, b) in self.hat[c].iter_mut().zip(&other.hat[c]) {
                *a += s * b;
            }
        }
        self.solenoidal = self.solenoidal && other.solenoidal;
    }

    /// Translate by a: F(· − a), i.e. multiply hats by e^{−ik·a}.
    pub fn shift(&self, a: [f64; 2]) -> Field2 {
        let mut out = self.clone();
        for idx in 0..self.grid.modes() {
            let k = self.grid.k_at(idx);
            let phase = C::from_polar(1.0, -(k[0] * a[0] + k[1] * a[1]));
            out.hat[0][idx] *= phase;
            out.hat[1][idx] *= phase;
        }
        out
    }
}

/// Physical constants of the particle: mass m, moment of inertia I, and the
/// conserved conjugate angular momentum M.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhysParams {
    pub mass: f64,
    pub inertia: f64,
    pub spin: f64,
}

impl Default for PhysParams {
    fn default() -> Self {
        PhysParams { mass: 1.0, inertia: 1.0, spin: 1.0 }
    }
}

/// Phase point Y = (A, Π, q, p).
#[derive(Debug, Clone)]
pub struct State {
    pub a: Field2,
    pub pi: Field2,
    pub q: [f64; 2],
    pub p: [f64; 2],
    pub params: PhysParams,
}

/// Perturbation Z = (Λ, Ψ, r, π) in the moving frame.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub lambda: Field2,
    pub psi: Field2,
    pub r: [f64; 2],
    pub pi: [f64; 2],
}

impl Perturbation {
    pub fn zeros(grid: &Arc<SpectralGrid>) -> Perturbation {
        Perturbation {
            lambda: Field2::zeros(grid),
            psi: Field2::zeros(grid),
            r: [0.0; 2],
            pi: [0.0; 2],
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.lambda.scale(s);
        self.psi.scale(s);
        for j in 0..2 {
            self.r[j] *= s;
            self.pi[j] *= s;
        }
    }

    pub fn add_scaled(&mut self, s: f64, other: &Perturbation) {
        self.lambda.add_scaled(s, &other.lambda);
        self.psi.add_scaled(s, &other.psi);
        for j in 0..2 {
            self.r[j] += s * other.r[j];
            self.pi[j] += s * other.pi[j];
        }
    }
}

/// Anything with the (field, field, vector, vector) phase-space layout.
pub trait PhasePoint {
    fn field_a(&self) -> &Field2;
    fn field_pi(&self) -> &Field2;
    fn vec_q(&self) -> [f64; 2];
    fn vec_p(&self) -> [f64; 2];
}

impl PhasePoint for State {
    fn field_a(&self) -> &Field2 {
        &self.a
    }
    fn field_pi(&self) -> &Field2 {
        &self.pi
    }
    fn vec_q(&self) -> [f64; 2] {
        self.q
    }
    fn vec_p(&self) -> [f64; 2] {
        self.p
    }
}

impl PhasePoint for Perturbation {
    fn field_a(&self) -> &Field2 {
        &self.lambda
    }
    fn field_pi(&self) -> &Field2 {
        &self.psi
    }
    fn vec_q(&self) -> [f64; 2] {
        self.r
    }
    fn vec_p(&self) -> [f64; 2] {
        self.pi
    }
}

/// Symplectic form Ω(Y₁, Y₂) = ⟨A₁, Π₂⟩ − ⟨Π₁, A₂⟩ + q₁·p₂ − p₁·q₂.
pub fn symplectic_form<T: PhasePoint, U: PhasePoint>(y1: &T, y2: &U) -> f64 {
    let (q1, p1) = (y1.vec_q(), y1.vec_p());
    let (q2, p2) = (y2.vec_q(), y2.vec_p());
    y1.field_a().inner(y2.field_pi()) - y1.field_pi().inner(y2.field_a())
        + q1[0] * p2[0] + q1[1] * p2[1]
        - p1[0] * q2[0] - p1[1] * q2[1]
}

/// ρ̂ and ∇ρ̂ sampled on the wavenumber lattice — the bridge between a
/// continuum density and grid pairings.
pub struct DensitySamples {
    pub grid: Arc<SpectralGrid>,
    pub rho_hat: Vec<f64>,
    pub grad: [Vec<f64>; 2],
}

impl DensitySamples {
    pub fn new(grid: &Arc<SpectralGrid>, rho: &RadialDensity) -> DensitySamples {
        let m = grid.modes();
        let mut rho_hat = vec![0.0; m];
        let mut g1 = vec![0.0; m];
        let mut g2 = vec![0.0; m];
        // The lattice is radially redundant; cache on |k| values per axis
        // pair would buy little — direct table lookups are already cheap.
        for idx in 0..m {
            let k = grid.k_at(idx);
            rho_hat[idx] = rho.rho_hat(k);
            let g = rho.grad_rho_hat(k);
            g1[idx] = g[0];
            g2[idx] = g[1];
        }
        DensitySamples { grid: grid.clone(), rho_hat, grad: [g1, g2] }
    }

    /// ⟨A, ρ(· − q)⟩ componentwise: a 2-vector.
    pub fn bracket_rho(&self, a: &Field2, q: [f64; 2]) -> [f64; 2] {
        let mut acc = [0.0; 2];
        for idx in 0..self.grid.modes() {
            let k = self.grid.k_at(idx);
            // conj(ρ̂ e^{−ik·q}) = ρ̂ e^{+ik·q}
            let phase = C::from_polar(self.rho_hat[idx], k[0] * q[0] + k[1] * q[1]);
            acc[0] += (a.hat[0][idx] * phase).re;
            acc[1] += (a.hat[1][idx] * phase).re;
        }
        let w = self.grid.pairing_weight();
        [acc[0] * w, acc[1] * w]
    }

    /// ⟨A, Jϱ(· − q)⟩ with ϱ̂ = i∇ρ̂, so (Jϱ)^ = (i∇₂ρ̂, −i∇₁ρ̂).
    pub fn bracket_jvarrho(&self, a: &Field2, q: [f64; 2]) -> f64 {
        let mut acc = 0.0;
        for idx in 0..self.grid.modes() {
            let k = self.grid.k_at(idx);
            let phase = C::from_polar(1.0, k[0] * q[0] + k[1] * q[1]);
            // conj(i g e^{−ikq}) = −i g e^{ikq} for real g.
            let g1 = self.grad[1][idx]; // (Jϱ)₁^ = i ∇₂ρ̂
            let g2 = -self.grad[0][idx]; // (Jϱ)₂^ = −i ∇₁ρ̂
            let z = (a.hat[0][idx] * g1 + a.hat[1][idx] * g2) * phase * C::new(0.0, -1.0);
            acc += z.re;
        }
        acc * self.grid.pairing_weight()
    }
}

/// ω(Y) = (M + ⟨A, Jϱ(· − q)⟩)/I.
pub fn omega_of_state(y: &State, samples: &DensitySamples) -> f64 {
    (y.params.spin + samples.bracket_jvarrho(&y.a, y.q)) / y.params.inertia
}

/// q̇(Y) = (p − ⟨A, ρ(· − q)⟩)/m.
pub fn qdot_of_state(y: &State, samples: &DensitySamples) -> [f64; 2] {
    let b = samples.bracket_rho(&y.a, y.q);
    [(y.p[0] - b[0]) / y.params.mass, (y.p[1] - b[1]) / y.params.mass]
}

/// H = ½(‖Π‖² + ‖∇A‖²) + m q̇²/2 + I ω²/2.
pub fn hamiltonian(y: &State, samples: &DensitySamples, omega: f64) -> f64 {
    let qd = qdot_of_state(y, samples);
    0.5 * (y.pi.inner(&y.pi) + y.a.grad_norm_sqr())
        + 0.5 * y.params.mass * (qd[0] * qd[0] + qd[1] * qd[1])
        + 0.5 * y.params.inertia * omega * omega
}

/// Displacement wrapped to [−L, L): the periodic representative of x − c.
pub fn wrap_delta(x: f64, c: f64, half_length: f64) -> f64 {
    let span = 2.0 * half_length;
    let mut d = (x - c) % span;
    if d < -half_length {
        d += span;
    } else if d >= half_length {
        d -= span;
    }
    d
}

/// Weighted field norm ‖∇Λ·w_β‖ + ‖Ψ·w_β‖ with w_β(y) = (1+|y−c|²)^{β/2};
/// the displacement is wrapped periodically.
pub fn weighted_field_norm(
    lambda: &Field2,
    psi: &Field2,
    beta: f64,
    center: [f64; 2],
) -> f64 {
    let grid = &lambda.grid;
    let n2 = grid.modes();
    let mut weight2 = vec![0.0; n2];
    for (idx, w) in weight2.iter_mut().enumerate() {
        let x = grid.x_at(idx);
        let dx = wrap_delta(x[0], center[0], grid.half_length());
        let dy = wrap_delta(x[1], center[1], grid.half_length());
        *w = (1.0 + dx * dx + dy * dy).powf(beta);
    }
    let h2 = grid.spacing() * grid.spacing();
    let sq = |hat: &[C], phase: Option<[f64; 2]>| -> f64 {
        // Optionally differentiate spectrally before going to real space.
        let data: Vec<C> = match phase {
            None => hat.to_vec(),
            Some(dir) => (0..n2)
                .map(|idx| {
                    let k = grid.k_at(idx);
                    hat[idx] * C::new(0.0, k[0] * dir[0] + k[1] * dir[1])
                })
                .collect(),
        };
        let real = grid.backward(&data);
        real.iter().zip(&weight2).map(|(&v, &w)| v * v * w).sum::<f64>() * h2
    };
    let mut grad_sq = 0.0;
    for c in 0..2 {
        grad_sq += sq(&lambda.hat[c], Some([1.0, 0.0]));
        grad_sq += sq(&lambda.hat[c], Some([0.0, 1.0]));
    }
    let mut psi_sq = 0.0;
    for c in 0..2 {
        psi_sq += sq(&psi.hat[c], None);
    }
    grad_sq.max(0.0).sqrt() + psi_sq.max(0.0).sqrt()
}

/// ‖Z‖_β for a perturbation: the field part plus |r| + |π|.
pub fn weighted_norm(z: &Perturbation, beta: f64, center: [f64; 2]) -> f64 {
    weighted_field_norm(&z.lambda, &z.psi, beta, center)
        + z.r[0].hypot(z.r[1])
        + z.pi[0].hypot(z.pi[1])
}

// ---------------------------------------------------------------------------
// MLF2 snapshot format: magic "MLF2", version u32 = 1, N u32, L f64,
// component count u32, then row-major little-endian f64 planes.
// ---------------------------------------------------------------------------

pub fn write_mlf2(
    path: &std::path::Path,
    n: usize,
    half_length: f64,
    planes: &[&[f64]],
) -> crate::Result<()> {
    use byteorder::{LittleEndian, WriteBytesExt};
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(b"MLF2")?;
    f.write_u32::<LittleEndian>(1)?;
    f.write_u32::<LittleEndian>(n as u32)?;
    f.write_f64::<LittleEndian>(half_length)?;
    f.write_u32::<LittleEndian>(planes.len() as u32)?;
    for plane in planes {
        assert_eq!(plane.len(), n * n);
        for &v in *plane {
            f.write_f64::<LittleEndian>(v)?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn read_mlf2(path: &std::path::Path) -> crate::Result<(usize, f64, Vec<Vec<f64>>)> {
    use byteorder::{LittleEndian, ReadBytesExt};
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != b"MLF2" {
        return Err(crate::Error::Config("not an MLF2 file".into()));
    }
    let version = f.read_u32::<LittleEndian>()?;
    if version != 1 {
        return Err(crate::Error::Config(format!("unsupported MLF2 version {version}")));
    }
    let n = f.read_u32::<LittleEndian>()? as usize;
    let half_length = f.read_f64::<LittleEndian>()?;
    let count = f.read_u32::<LittleEndian>()? as usize;
    let mut planes = Vec::with_capacity(count);
    for _ in 0..count {
        let mut plane = vec![0.0; n * n];
        for v in &mut plane {
            *v = f.read_f64::<LittleEndian>()?;
        }
        planes.push(plane);
    }
    Ok((n, half_length, planes))
}
