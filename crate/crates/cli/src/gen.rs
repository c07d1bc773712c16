//! Random instance generators: uniform in a hyperbolic ball (Klein-model
//! rejection against the volume density) or uniform in a horobox.

use hyptsp::error::{Error, Result};
use hyptsp::hgeom::{from_klein, HPoint};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Uniform sample from the hyperbolic ball of the given radius centered at
/// the model base point (0, .., 0, 1). In the Klein model the ball is the
/// Euclidean ball of radius tanh(radius); the volume element there is
/// (1 - |u|^2)^-((d+1)/2), handled by rejection against its maximum.
pub fn sample_ball(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> Result<HPoint> {
    let r_klein = radius.tanh();
    let max_density = (1.0 - r_klein * r_klein).powf(-(d as f64 + 1.0) / 2.0);
    loop {
        // uniform in the Euclidean ball of radius r_klein
        let u: Vec<f64> = (0..d).map(|_| rng.gen_range(-r_klein..=r_klein)).collect();
        let norm_sq: f64 = u.iter().map(|v| v * v).sum();
        if norm_sq > r_klein * r_klein {
            continue;
        }
        let density = (1.0 - norm_sq).powf(-(d as f64 + 1.0) / 2.0);
        if rng.gen_range(0.0..1.0) <= density / max_density {
            return from_klein(&u);
        }
    }
}

/// Uniform sample (with respect to hyperbolic volume z^-d dx dz) from the
/// horobox [0, scale]^(d-1) x [1, e^scale].
pub fn sample_horobox(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> HPoint {
    let x: Vec<f64> = (0..d - 1).map(|_| rng.gen_range(0.0..scale)).collect();
    let z_max = scale.exp();
    // inverse CDF of z^-d on [1, z_max]
    let tail = 1.0 - z_max.powi(1 - d as i32);
    let u = rng.gen_range(0.0..1.0);
    let z = (1.0 - u * tail).powf(1.0 / (1.0 - d as f64));
    HPoint { x, z }
}

pub fn generate(kind: &str, d: usize, n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Result<Vec<HPoint>> {
    if n < 2 {
        return Err(Error::Domain(format!("need n >= 2, got {n}")));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Domain(format!("scale must be positive, got {scale}")));
    }
    match kind {
        "ball" => (0..n).map(|_| sample_ball(rng, d, scale)).collect(),
        "horobox" => Ok((0..n).map(|_| sample_horobox(rng, d, scale)).collect()),
        other => Err(Error::Domain(format!("unknown instance kind '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hyptsp::hgeom::hyp_distance_unchecked;
    use rand::SeedableRng;

    #[test]
    fn ball_points_stay_in_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let center = HPoint { x: vec![0.0], z: 1.0 };
        for _ in 0..500 {
            let p = sample_ball(&mut rng, 2, 1.5).unwrap();
            assert!(hyp_distance_unchecked(&p, &center) <= 1.5 + 1e-9);
        }
    }

    #[test]
    fn ball_density_matches_volume_ratio() {
        // fraction within radius rho approximates the volume ratio
        // of integrals of sinh^(d-1)
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let center = HPoint { x: vec![0.0], z: 1.0 };
        let (radius, rho) = (2.0f64, 1.2f64);
        let n = 20_000;
        let inside = (0..n)
            .filter(|_| {
                let p = sample_ball(&mut rng, 2, radius).unwrap();
                hyp_distance_unchecked(&p, &center) <= rho
            })
            .count();
        // d = 2: volume(r) = 2 pi (cosh r - 1)
        let expect = (rho.cosh() - 1.0) / (radius.cosh() - 1.0);
        let got = inside as f64 / n as f64;
        let sigma = (expect * (1.0 - expect) / n as f64).sqrt();
        assert!(
            (got - expect).abs() <= 3.0 * sigma + 0.01,
            "fraction {got} vs expected {expect} (sigma {sigma})"
        );
    }

    #[test]
    fn horobox_points_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let p = sample_horobox(&mut rng, 3, 1.3);
            assert!(p.z >= 1.0 && p.z <= 1.3f64.exp());
            assert!(p.x.iter().all(|&v| (0.0..=1.3).contains(&v)));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        let pa = generate("ball", 2, 10, 1.0, &mut a).unwrap();
        let pb = generate("ball", 2, 10, 1.0, &mut b).unwrap();
        for (x, y) in pa.iter().zip(&pb) {
            assert!(x.approx_eq(y, 0.0));
        }
    }
}
