//! Traveling–rotating solitons, the tangent frame of the solitary manifold,
//! and the symplectic Gram matrix Ω(v).
//!
//! For |v| < 1 the system has a two-parameter family of solitons
//! S(σ) = (A_v(x−b), Π_v(x−b), b, p_v), σ = (b, v), given in Fourier space by
//!
//! ```text
//! Â_v(k) = [ (v − (v·k)k/|k|²) ρ̂(k) − w Jϱ̂(k) ] / D̂₀(k),
//! Π̂_v(k) = −i(v·k) Â_v(k),            D̂₀ = k² − (v·k)²,
//! ```
//!
//! with rotation frequency w = M/(I + ϰ(v)) and momentum p_v = m v + ⟨A_v, ρ⟩.
//! Under the crate convention ϱ̂ = i∇ρ̂, the hat splits into an even real part
//! A⁺ = (v − (v·k)k/k²)ρ̂/D̂₀ and an odd real part A⁻ = −w J∇ρ̂/D̂₀ as
//! Â_v = A⁺ + iA⁻.
//!
//! The tangent frame of the manifold 𝒮 = {S(σ)} at σ is
//!
//! ```text
//! τ_j   = ∂_{b_j}S = (−∂_j A_v, −∂_j Π_v, e_j, 0),            j = 1, 2,
//! τ_{j+2} = ∂_{v_j}S = (∂_{v_j}A_v, ∂_{v_j}Π_v, 0, ∂_{v_j}p_v),
//! ```
//!
//! where the v-derivatives carry the chain term from w = w(v):
//!
//! ```text
//! ∂_{v_l}A⁺ = [e_l + 2(v·k)k_l v/D̂₀ − k_l(k² + (v·k)²)k/(k²D̂₀)] ρ̂/D̂₀,
//! ∂_{v_l}A⁻ = −[2(v·k)k_l/D̂₀ − c_l] w J∇ρ̂/D̂₀,
//! c_l = (I + ϰ)^{−1} (2π)^{−2} ∫ 2(v·k)k_l |∇ρ̂|²/D̂₀² dk,
//! ∂_{v_l}p_v = (m + ∫|ρ̂|²/D̂₀) e_l + v ∫ 2(v·k)k_l|ρ̂|²/D̂₀²
//!              − ∫ (k² + (v·k)²) k_l k |ρ̂|²/(k²D̂₀²).
//! ```
//!
//! The matrix Ω_{jl}(v) = Ω(τ_j, τ_l) is computed by two independent routes —
//! grid inner products and direct k-quadrature — and, for v aligned with e₁,
//! has the checkerboard structure Ω_{jl} = 0 (j,l ≤ 2), Ω_{j+2,j+2} = 0,
//! Ω₁₄ = Ω₂₃ = 0 with det Ω = Ω₁₃² Ω₂₄².

use num_complex::Complex64 as C;
use std::sync::Arc;

use crate::density::RadialDensity;
use crate::grid::{
    symplectic_form, wrap_delta, Field2, Perturbation, PhysParams, SpectralGrid, State,
};
use crate::kernels::{fourier_integral, kernel_matrices, omega_of_v, QuadSpec};
use crate::{Error, Result};

/// Soliton parameters σ = (b, v) with the physical constants (m, I, M).
#[derive(Debug, Clone, Copy)]
pub struct SolitonParams {
    /// Center b.
    pub b: [f64; 2],
    /// Velocity v, |v| < 1.
    pub v: [f64; 2],
    /// Mass, moment of inertia, spin parameter M.
    pub params: PhysParams,
}

impl SolitonParams {
    pub fn new(b: [f64; 2], v: [f64; 2], params: PhysParams) -> Result<SolitonParams> {
        if v[0].hypot(v[1]) >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "soliton speed |v| = {} must be < 1",
                v[0].hypot(v[1])
            )));
        }
        if params.inertia <= 0.0 {
            return Err(Error::InvalidParameter(
                "moment of inertia must be positive".into(),
            ));
        }
        Ok(SolitonParams { b, v, params })
    }

    /// Rotation frequency w = M/(I + ϰ(v)).
    pub fn rotation_frequency(&self, rho: &RadialDensity) -> Result<f64> {
        omega_of_v(rho, self.v, self.params.spin, self.params.inertia)
    }
}

/// Soliton field hats (Â_v, Π̂_v) at one wavenumber (center b = 0).
fn soliton_hats(k: [f64; 2], rh: f64, g: [f64; 2], v: [f64; 2], w: f64) -> ([C; 2], [C; 2]) {
    let k2 = k[0] * k[0] + k[1] * k[1];
    if k2 == 0.0 {
        return ([C::new(0.0, 0.0); 2], [C::new(0.0, 0.0); 2]);
    }
    let vk = v[0] * k[0] + v[1] * k[1];
    let d0 = k2 - vk * vk;
    let jg = [g[1], -g[0]];
    let mut a = [C::new(0.0, 0.0); 2];
    let mut pi = [C::new(0.0, 0.0); 2];
    for c in 0..2 {
        let plus = (v[c] - vk * k[c] / k2) * rh / d0;
        let minus = -w * jg[c] / d0;
        a[c] = C::new(plus, minus);
        pi[c] = C::new(0.0, -vk) * a[c];
    }
    (a, pi)
}

/// Builds the soliton state S(σ) on the grid: fields centered at b by the
/// spectral phase e^{−ik·b}, q = b, p = p_v = m v + ⟨A_v, ρ⟩ (lattice pairing,
/// so the state is exactly consistent with the semi-discrete dynamics).
pub fn build_soliton(
    rho: &RadialDensity,
    sigma: &SolitonParams,
    grid: &Arc<SpectralGrid>,
) -> Result<State> {
    let sigma = SolitonParams::new(sigma.b, sigma.v, sigma.params)?;
    let w = sigma.rotation_frequency(rho)?;
    let mut a = Field2::zeros(grid);
    let mut pi = Field2::zeros(grid);
    let mut bracket = [0.0_f64; 2];
    for idx in 0..grid.modes() {
        let k = grid.k_at(idx);
        let rh = rho.rho_hat(k);
        let g = rho.grad_rho_hat(k);
        let (ah, ph) = soliton_hats(k, rh, g, sigma.v, w);
        // ⟨A_v(·−b), ρ(·−b)⟩ = ⟨A_v, ρ⟩: the shift phases cancel.
        bracket[0] += (ah[0] * rh).re;
        bracket[1] += (ah[1] * rh).re;
        let phase = C::from_polar(1.0, -(k[0] * sigma.b[0] + k[1] * sigma.b[1]));
        a.hat[0][idx] = ah[0] * phase;
        a.hat[1][idx] = ah[1] * phase;
        pi.hat[0][idx] = ph[0] * phase;
        pi.hat[1][idx] = ph[1] * phase;
    }
    let wq = grid.pairing_weight();
    let m = sigma.params.mass;
    Ok(State {
        a,
        pi,
        q: sigma.b,
        p: [
            m * sigma.v[0] + bracket[0] * wq,
            m * sigma.v[1] + bracket[1] * wq,
        ],
        params: sigma.params,
    })
}

/// Grid residual of the stationary equation
/// −(v·∇)Π_v = ΔA_v + 𝒫[vρ − w Jϱ] with the sources ρ, Jϱ sampled pointwise
/// in real space.  The soliton solves the equation exactly against the
/// continuum transforms, so this measures the sampling (aliasing) defect of
/// the discretization and must vanish under grid refinement.
pub fn stationarity_residual(
    rho: &RadialDensity,
    sigma: &SolitonParams,
    grid: &Arc<SpectralGrid>,
) -> Result<f64> {
    let state = build_soliton(rho, sigma, grid)?;
    let w = sigma.rotation_frequency(rho)?;
    let l = grid.half_length();
    let n2 = grid.modes();
    let mut s1 = vec![0.0; n2];
    let mut s2 = vec![0.0; n2];
    for idx in 0..n2 {
        let x = grid.x_at(idx);
        let y = [wrap_delta(x[0], sigma.b[0], l), wrap_delta(x[1], sigma.b[1], l)];
        let r = rho.rho(y);
        // Jϱ(y) = (y₂ρ, −y₁ρ).
        s1[idx] = sigma.v[0] * r - w * y[1] * r;
        s2[idx] = sigma.v[1] * r + w * y[0] * r;
    }
    let mut src = Field2::from_real(grid, [&s1, &s2]);
    src.project_solenoidal_in_place();
    let mut res = Field2::zeros(grid);
    for idx in 0..n2 {
        let k = grid.k_at(idx);
        let k2 = k[0] * k[0] + k[1] * k[1];
        let vk = sigma.v[0] * k[0] + sigma.v[1] * k[1];
        for c in 0..2 {
            // R̂ = −(v·∇)Π − ΔA − 𝒫ŝ = −i(v·k)Π̂ + k²Â − ŝ.
            res.hat[c][idx] =
                C::new(0.0, -vk) * state.pi.hat[c][idx] + k2 * state.a.hat[c][idx]
                    - src.hat[c][idx];
        }
    }
    Ok(res.l2_norm())
}

/// L² norms of ∇A over the annuli r ≤ |y − q| < 2r, one per entry of `radii`.
pub fn grad_ring_norms(state: &State, radii: &[f64]) -> Vec<f64> {
    let grid = &state.a.grid;
    let n2 = grid.modes();
    let l = grid.half_length();
    let h = grid.spacing();
    // Real-space partials ∂_m A_c by spectral derivative.
    let mut parts: Vec<Vec<f64>> = Vec::with_capacity(4);
    for c in 0..2 {
        for m in 0..2 {
            let mut hat = vec![C::new(0.0, 0.0); n2];
            for idx in 0..n2 {
                let k = grid.k_at(idx);
                hat[idx] = C::new(0.0, k[m]) * state.a.hat[c][idx];
            }
            parts.push(grid.backward(&hat));
        }
    }
    radii
        .iter()
        .map(|&r| {
            let mut acc = 0.0;
            for idx in 0..n2 {
                let x = grid.x_at(idx);
                let dy = [wrap_delta(x[0], state.q[0], l), wrap_delta(x[1], state.q[1], l)];
                let rr = dy[0].hypot(dy[1]);
                if rr >= r && rr < 2.0 * r {
                    for p in &parts {
                        acc += p[idx] * p[idx];
                    }
                }
            }
            (acc * h * h).sqrt()
        })
        .collect()
}

/// Analytic coefficients shared by the lattice and quadrature routes of the
/// tangent frame: velocity, rotation frequency, the w-chain terms c_l, and
/// the momentum derivatives ∂_{v_l}p_v.
#[derive(Debug, Clone, Copy)]
struct FrameCoeffs {
    v: [f64; 2],
    w: f64,
    /// c_l = ∂_{v_l}ϰ / (I + ϰ), so that ∂_{v_l}w = −w c_l.
    chain: [f64; 2],
    /// dp[l] = ∂_{v_l}p_v.
    dp: [[f64; 2]; 2],
}

impl FrameCoeffs {
    fn build(rho: &RadialDensity, v: [f64; 2], params: PhysParams) -> Result<FrameCoeffs> {
        let w = omega_of_v(rho, v, params.spin, params.inertia)?;
        let km = kernel_matrices(rho, v, C::new(0.0, 0.0))?;
        let i_plus_kappa = params.inertia + km.varkappa.re;
        let spec = QuadSpec::default();
        let zero = C::new(0.0, 0.0);
        let quad = |f: &mut dyn FnMut([f64; 2], f64, [f64; 2]) -> f64| -> f64 {
            fourier_integral(rho, v, zero, &spec, |k, rh, g| C::new(f(k, rh, g), 0.0)).re
        };
        let mut chain = [0.0; 2];
        for l in 0..2 {
            chain[l] = quad(&mut |k, _rh, g| {
                let k2 = k[0] * k[0] + k[1] * k[1];
                if k2 == 0.0 {
                    return 0.0;
                }
                let vk = v[0] * k[0] + v[1] * k[1];
                let d0 = k2 - vk * vk;
                2.0 * vk * k[l] * (g[0] * g[0] + g[1] * g[1]) / (d0 * d0)
            }) / i_plus_kappa;
        }
        // ∂_{v_l}p = (m + s0) e_l + s1_l v − T_l, with
        // s0 = ∫|ρ̂|²/D̂₀, s1_l = ∫2(v·k)k_l|ρ̂|²/D̂₀²,
        // T_{l,j} = ∫(k² + (v·k)²)k_l k_j|ρ̂|²/(k²D̂₀²).
        let s0 = quad(&mut |k, rh, _g| {
            let k2 = k[0] * k[0] + k[1] * k[1];
            if k2 == 0.0 {
                return 0.0;
            }
            let vk = v[0] * k[0] + v[1] * k[1];
            rh * rh / (k2 - vk * vk)
        });
        let mut dp = [[0.0; 2]; 2];
        for l in 0..2 {
            let s1 = quad(&mut |k, rh, _g| {
                let k2 = k[0] * k[0] + k[1] * k[1];
                if k2 == 0.0 {
                    return 0.0;
                }
                let vk = v[0] * k[0] + v[1] * k[1];
                let d0 = k2 - vk * vk;
                2.0 * vk * k[l] * rh * rh / (d0 * d0)
            });
            for j in 0..2 {
                let t = quad(&mut |k, rh, _g| {
                    let k2 = k[0] * k[0] + k[1] * k[1];
                    if k2 == 0.0 {
                        return 0.0;
                    }
                    let vk = v[0] * k[0] + v[1] * k[1];
                    let d0 = k2 - vk * vk;
                    (k2 + vk * vk) * k[l] * k[j] * rh * rh / (k2 * d0 * d0)
                });
                dp[l][j] = s1 * v[j] - t;
                if j == l {
                    dp[l][j] += params.mass + s0;
                }
            }
        }
        Ok(FrameCoeffs { v, w, chain, dp })
    }

    /// Field hats (Λ̂, Ψ̂) of the four tangent vectors at one wavenumber.
    fn tangent_hats(&self, k: [f64; 2], rh: f64, g: [f64; 2]) -> ([[C; 2]; 4], [[C; 2]; 4]) {
        let zero = C::new(0.0, 0.0);
        let mut lambda = [[zero; 2]; 4];
        let mut psi = [[zero; 2]; 4];
        let k2 = k[0] * k[0] + k[1] * k[1];
        if k2 == 0.0 {
            return (lambda, psi);
        }
        let v = self.v;
        let vk = v[0] * k[0] + v[1] * k[1];
        let d0 = k2 - vk * vk;
        let jg = [g[1], -g[0]];
        let (a, pi) = soliton_hats(k, rh, g, v, self.w);
        for j in 0..2 {
            let der = C::new(0.0, -k[j]);
            for c in 0..2 {
                // τ_j = −∂_j(A, Π): multiply hats by −ik_j.
                lambda[j][c] = der * a[c];
                psi[j][c] = der * pi[c];
                // τ_{j+2} = ∂_{v_j}(A, Π).
                let dplus = (if c == j { 1.0 } else { 0.0 } + 2.0 * vk * k[j] * v[c] / d0
                    - k[j] * (k2 + vk * vk) * k[c] / (k2 * d0))
                    * rh
                    / d0;
                let dminus = -(2.0 * vk * k[j] / d0 - self.chain[j]) * self.w * jg[c] / d0;
                let da = C::new(dplus, dminus);
                lambda[j + 2][c] = da;
                // ∂_{v_j}Π̂ = −ik_j Â − i(v·k)∂_{v_j}Â.
                psi[j + 2][c] = der * a[c] + C::new(0.0, -vk) * da;
            }
        }
        (lambda, psi)
    }
}

/// The tangent frame τ₁..τ₄ of the solitary manifold at (b = 0, v).
#[derive(Debug)]
pub struct TangentFrame {
    pub v: [f64; 2],
    /// Rotation frequency w(v).
    pub w: f64,
    /// Momentum derivatives ∂_{v_j}p_v (rows j = 1, 2).
    pub dp: [[f64; 2]; 2],
    pub tau: [Perturbation; 4],
}

/// Builds the tangent frame on the grid: τ₁, τ₂ by spectral differentiation,
/// τ₃, τ₄ from the analytic v-derivative formulas including the w-chain term.
pub fn tangent_frame(
    rho: &RadialDensity,
    v: [f64; 2],
    params: PhysParams,
    grid: &Arc<SpectralGrid>,
) -> Result<TangentFrame> {
    let coeffs = FrameCoeffs::build(rho, v, params)?;
    let mut tau: [Perturbation; 4] = std::array::from_fn(|_| Perturbation::zeros(grid));
    tau[0].r = [1.0, 0.0];
    tau[1].r = [0.0, 1.0];
    tau[2].pi = coeffs.dp[0];
    tau[3].pi = coeffs.dp[1];
    for idx in 0..grid.modes() {
        let k = grid.k_at(idx);
        let rh = rho.rho_hat(k);
        let g = rho.grad_rho_hat(k);
        let (lambda, psi) = coeffs.tangent_hats(k, rh, g);
        for (j, t) in tau.iter_mut().enumerate() {
            for c in 0..2 {
                t.lambda.hat[c][idx] = lambda[j][c];
                t.psi.hat[c][idx] = psi[j][c];
            }
        }
    }
    Ok(TangentFrame { v, w: coeffs.w, dp: coeffs.dp, tau })
}

/// The symplectic Gram matrix Ω_{jl}(v) = Ω(τ_j, τ_l), computed by two
/// independent routes and rotated back to the input frame.
#[derive(Debug, Clone)]
pub struct OmegaMatrix {
    pub v: [f64; 2],
    /// Continuum k-quadrature route (the canonical entries).
    pub entries: [[f64; 4]; 4],
    /// Grid inner-product route.
    pub grid_entries: [[f64; 4]; 4],
    /// Max |grid − quadrature| relative to the largest entry.
    pub disagreement: f64,
    /// det of `entries`.
    pub det: f64,
}

impl OmegaMatrix {
    /// CSV export: one row per entry with both routes.
    pub fn csv(&self) -> String {
        let mut out = String::from("entry,quadrature,grid\n");
        for j in 0..4 {
            for l in 0..4 {
                out.push_str(&format!(
                    "omega_{}{},{:.12e},{:.12e}\n",
                    j + 1,
                    l + 1,
                    self.entries[j][l],
                    self.grid_entries[j][l]
                ));
            }
        }
        out
    }
}

/// Computes Ω(v).  The entries are evaluated in the frame with v ∥ e₁ (where
/// the Appendix-A structure holds) and conjugated back by the block rotation
/// diag(R, R).  Errors if the grid and quadrature routes disagree beyond
/// 1e−4 relative.
pub fn omega_matrix(
    rho: &RadialDensity,
    v: [f64; 2],
    params: PhysParams,
    grid: &Arc<SpectralGrid>,
) -> Result<OmegaMatrix> {
    let speed = v[0].hypot(v[1]);
    if speed >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "|v| = {speed} must be < 1"
        )));
    }
    // Rotation with R e₁ = v/|v| (identity for v = 0).
    let (c, s) = if speed > 0.0 { (v[0] / speed, v[1] / speed) } else { (1.0, 0.0) };
    let v0 = [speed, 0.0];
    let coeffs = FrameCoeffs::build(rho, v0, params)?;

    // Route 1: grid inner products through the shared symplectic form.
    let frame = tangent_frame(rho, v0, params, grid)?;
    let mut grid_entries = [[0.0; 4]; 4];
    for j in 0..4 {
        for l in 0..4 {
            grid_entries[j][l] = symplectic_form(&frame.tau[j], &frame.tau[l]);
        }
    }

    // Route 2: direct k-quadrature of ⟨Λ_j, Ψ_l⟩ − ⟨Ψ_j, Λ_l⟩ plus the exact
    // q/p pairings.  The integrand is exactly antisymmetric in (j, l) since
    // Re(x·ȳ) is symmetric.
    let spec = QuadSpec::default();
    let zero = C::new(0.0, 0.0);
    let mut entries = [[0.0; 4]; 4];
    for j in 0..4 {
        for l in (j + 1)..4 {
            let field = fourier_integral(rho, v0, zero, &spec, |k, rh, g| {
                let (lam, psi) = coeffs.tangent_hats(k, rh, g);
                let mut acc = C::new(0.0, 0.0);
                for c in 0..2 {
                    acc += lam[j][c] * psi[l][c].conj() - psi[j][c] * lam[l][c].conj();
                }
                C::new(acc.re, 0.0)
            })
            .re;
            // q_j·p_l − p_j·q_l with q-slots e₁, e₂, 0, 0 and p-slots
            // 0, 0, ∂_{v₁}p, ∂_{v₂}p.
            let qp = if j < 2 && l >= 2 { coeffs.dp[l - 2][j] } else { 0.0 };
            entries[j][l] = field + qp;
            entries[l][j] = -entries[j][l];
        }
    }

    // Compare the routes before rotating.
    let scale = entries
        .iter()
        .flatten()
        .fold(0.0_f64, |m, &x| m.max(x.abs()))
        .max(1e-300);
    let mut disagreement = 0.0_f64;
    for j in 0..4 {
        for l in 0..4 {
            disagreement = disagreement.max((grid_entries[j][l] - entries[j][l]).abs() / scale);
        }
    }
    if disagreement > 1e-4 {
        return Err(Error::Numerical(format!(
            "Ω routes disagree: {disagreement:.3e} relative (grid vs quadrature)"
        )));
    }

    // Conjugate by the block rotation B = diag(R, R).
    let rot = |m: &[[f64; 4]; 4]| -> [[f64; 4]; 4] {
        let b = [
            [c, -s, 0.0, 0.0],
            [s, c, 0.0, 0.0],
            [0.0, 0.0, c, -s],
            [0.0, 0.0, s, c],
        ];
        let mut out = [[0.0; 4]; 4];
        for j in 0..4 {
            for l in 0..4 {
                for p in 0..4 {
                    for q in 0..4 {
                        out[j][l] += b[j][p] * m[p][q] * b[l][q];
                    }
                }
            }
        }
        out
    };
    let entries = rot(&entries);
    let grid_entries = rot(&grid_entries);
    let det = nalgebra::Matrix4::from_fn(|j, l| entries[j][l]).determinant();
    Ok(OmegaMatrix { v, entries, grid_entries, disagreement, det })
}

/// Writes a soliton snapshot (planes A₁, A₂, Π₁, Π₂) in the MLF2 format.
pub fn write_soliton_snapshot(path: &std::path::Path, state: &State) -> Result<()> {
    let a = state.a.to_real();
    let pi = state.pi.to_real();
    crate::grid::write_mlf2(
        path,
        state.a.grid.n(),
        state.a.grid.half_length(),
        &[&a[0], &a[1], &pi[0], &pi[1]],
    )
}
