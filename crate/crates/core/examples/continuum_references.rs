//! Continuum targets: heat kernel, two-point moment of the stochastic heat equation, Gumbel extremes.

use rwre_lab::sheref::{extreme_reference, gamma_coeff, heat_kernel, two_point_contour, two_point_paired_gaussian, ContourConfig};

fn main() -> Result<(), rwre_lab::Error> {
    let var = 1.0 / 12.0;
    let gamma = gamma_coeff(var)?;
    let alpha = 1.0 / (gamma * gamma);
    println!("Beta(1): gamma^2 = {:.4}, alpha = {alpha:.4}", gamma * gamma);
    println!("p_1(0) = {:.6}", heat_kernel(1.0, 0.0)?);

    let (v, imag) = two_point_contour(1.0, 0.0, 0.5, alpha, &ContourConfig::default())?;
    println!("E[U(1,0)U(1,0.5)] = {:.6} (quadrature bound {:.1e}, imaginary part {imag:.1e})", v.value, v.error);
    let paired = two_point_paired_gaussian(1.0, 0.0, 1.0, alpha)?;
    println!("E[U(1,phi)^2] for a unit Gaussian bump = {:.6}", paired.value);

    let r = extreme_reference(1.0, 0.0, 1.0, 4096.0, 0.0)?;
    println!("extremes at N=4096: log k = {:.2}, a_N = {:.3}, P(Z <= 0) = {:.4}", r.log_k, r.a_n, r.cdf(0.0));
    Ok(())
}
