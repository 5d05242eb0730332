//! Position-encoding mathematics.
//!
//! Three encoders live here. The absolute sinusoidal encoder and the 1-D
//! rotary (RoPE) encoder are reference implementations kept for property
//! tests; the spherical rotary encoding is the one the model uses. A
//! geotoken's latitude and longitude act directly as rotation angles: every
//! consecutive triple of an embedding vector is rotated by
//! `Rz(longitude) · Rx(latitude)`, so attention scores between two rotated
//! vectors depend on the tokens' spherical displacement rather than on any
//! sequence position.

use crate::error::{Error, Result};

/// Wraps an angle into `[-π, +π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can return exactly 2π for inputs like -π-ε; fold that back.
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// A latitude/longitude pair in radians: the rotation parameters of the
/// spherical encoding. Latitude rotates about the x axis, longitude about
/// the polar z axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoAngles {
    /// Latitude φ in radians, expected in `[-π/2, +π/2]`.
    pub lat_phi: f64,
    /// Longitude θ in radians, wrapped into `[-π, +π)` on construction.
    pub lon_theta: f64,
}

impl GeoAngles {
    /// Builds the pair, wrapping the longitude into `[-π, +π)`. Latitudes
    /// are taken as given; the data layer guarantees they stay within the
    /// poles.
    pub fn new(lat_phi: f64, lon_theta: f64) -> Self {
        GeoAngles {
            lat_phi,
            lon_theta: wrap_angle(lon_theta),
        }
    }

    /// Exact degree→radian conversion (`deg · π/180`) at the data boundary.
    pub fn from_degrees(lat_deg: f64, lon_deg: f64) -> Self {
        GeoAngles::new(lat_deg.to_radians(), lon_deg.to_radians())
    }
}

/// Row-major 3×3 rotation matrix: one diagonal block of the spherical
/// rotary matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationBlock3 {
    m: [f64; 9],
}

impl RotationBlock3 {
    pub fn identity() -> Self {
        RotationBlock3 {
            m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        }
    }

    pub fn from_rows(m: [f64; 9]) -> Self {
        RotationBlock3 { m }
    }

    /// Rotation about the x axis.
    pub fn rot_x(phi: f64) -> Self {
        let (s, c) = phi.sin_cos();
        RotationBlock3 {
            m: [1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c],
        }
    }

    /// Rotation about the y axis.
    pub fn rot_y(psi: f64) -> Self {
        let (s, c) = psi.sin_cos();
        RotationBlock3 {
            m: [c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c],
        }
    }

    /// Rotation about the polar z axis.
    pub fn rot_z(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        RotationBlock3 {
            m: [c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.m[r * 3 + c]
    }

    pub fn as_slice(&self) -> &[f64; 9] {
        &self.m
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        RotationBlock3 {
            m: [m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]],
        }
    }

    pub fn matmul(&self, other: &RotationBlock3) -> Self {
        let mut out = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += self.m[i * 3 + k] * other.m[k * 3 + j];
                }
                out[i * 3 + j] = acc;
            }
        }
        RotationBlock3 { m: out }
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.m;
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    /// Applies the matrix to a 3-vector.
    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [
            m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
            m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
        ]
    }

    /// Applies the matrix to consecutive triples of a flat slice, in place.
    pub fn apply_blockwise(&self, data: &mut [f64]) {
        debug_assert_eq!(data.len() % 3, 0);
        for triple in data.chunks_exact_mut(3) {
            let out = self.apply([triple[0], triple[1], triple[2]]);
            triple.copy_from_slice(&out);
        }
    }

    /// `‖MᵀM − I‖∞`: the worst orthonormality defect.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.transpose().matmul(self);
        let eye = RotationBlock3::identity();
        gram.m
            .iter()
            .zip(&eye.m)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Absolute sinusoidal position encoding: entry `2t` is
/// `sin(pos / 10000^(2t/dim))`, entry `2t+1` the matching cosine.
pub fn sinusoidal_encoding(pos: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidDimension(format!(
            "sinusoidal encoding needs an even positive dimension, got {dim}"
        )));
    }
    let mut out = vec![0.0; dim];
    for t in 0..dim / 2 {
        let angle = pos as f64 / 10000f64.powf(2.0 * t as f64 / dim as f64);
        out[2 * t] = angle.sin();
        out[2 * t + 1] = angle.cos();
    }
    Ok(out)
}

/// Frequencies of the 1-D rotary encoder: `θ_i = 10000^(−(2i−1)/dim)` for
/// `i = 1..dim/2`, strictly decreasing and positive.
#[derive(Debug, Clone, PartialEq)]
pub struct RopeFrequencies {
    dim: usize,
    thetas: Vec<f64>,
}

impl RopeFrequencies {
    /// Builds frequencies from explicit angles; used by tests that inject
    /// a fixed rotation angle.
    pub fn from_thetas(thetas: Vec<f64>) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::InvalidDimension(
                "rotary frequencies need at least one angle".into(),
            ));
        }
        if thetas.iter().any(|&t| t <= 0.0) {
            return Err(Error::Domain("rotary angles must be positive".into()));
        }
        if thetas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Domain(
                "rotary angles must be strictly decreasing".into(),
            ));
        }
        Ok(RopeFrequencies {
            dim: thetas.len() * 2,
            thetas,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }
}

/// Canonical rotary frequency schedule for an even dimension.
pub fn rope_frequencies(dim: usize) -> Result<RopeFrequencies> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidDimension(format!(
            "rotary encoding needs an even positive dimension, got {dim}"
        )));
    }
    let thetas = (1..=dim / 2)
        .map(|i| 10000f64.powf(-((2 * i - 1) as f64) / dim as f64))
        .collect();
    Ok(RopeFrequencies { dim, thetas })
}

/// Rotates each consecutive pair `(x[2t], x[2t+1])` by the angle
/// `m · θ_t`; an isometry for any position `m`.
pub fn rope_rotate(x: &[f64], m: usize, freqs: &RopeFrequencies) -> Result<Vec<f64>> {
    if x.len() != freqs.dim {
        return Err(Error::InvalidDimension(format!(
            "vector of length {} does not match rotary dimension {}",
            x.len(),
            freqs.dim
        )));
    }
    let mut out = vec![0.0; x.len()];
    for (t, &theta) in freqs.thetas.iter().enumerate() {
        let (s, c) = (m as f64 * theta).sin_cos();
        let (a, b) = (x[2 * t], x[2 * t + 1]);
        out[2 * t] = a * c - b * s;
        out[2 * t + 1] = a * s + b * c;
    }
    Ok(out)
}

/// Full three-angle Euler rotation `Rz(θ) · Ry(ψ) · Rx(φ)`, written out
/// elementwise. φ, ψ, θ rotate about the x, y, z axes respectively.
pub fn euler_rotation(phi: f64, psi: f64, theta: f64) -> RotationBlock3 {
    let (sf, cf) = phi.sin_cos();
    let (sp, cp) = psi.sin_cos();
    let (st, ct) = theta.sin_cos();
    RotationBlock3::from_rows([
        cp * ct,
        -cf * st + sf * sp * ct,
        sf * st + cf * sp * ct,
        cp * st,
        cf * ct + sf * sp * st,
        -sf * ct + cf * sp * st,
        -sp,
        sf * cp,
        cf * cp,
    ])
}

/// The reduced spherical rotation: the Euler matrix with the y-axis angle
/// pinned to zero, i.e. `Rz(θ) · Rx(φ)` with θ the longitude and φ the
/// latitude.
pub fn spherical_block(angles: GeoAngles) -> RotationBlock3 {
    euler_rotation(angles.lat_phi, 0.0, angles.lon_theta)
}

/// Marker for an embedding dimension that the spherical encoding can act
/// on: construction fails unless the dimension is divisible by three.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeoRotary {
    dim: usize,
}

impl GeoRotary {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim % 3 != 0 {
            return Err(Error::InvalidDimension(format!(
                "spherical encoding needs a positive dimension divisible by 3, got {dim}"
            )));
        }
        Ok(GeoRotary { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Rotates every consecutive triple of `x` by the token's spherical block.
/// Runs in O(dim); the block-diagonal matrix is never materialized.
pub fn apply_geo_rotation(x: &[f64], angles: GeoAngles, rot: GeoRotary) -> Result<Vec<f64>> {
    if x.len() != rot.dim {
        return Err(Error::InvalidDimension(format!(
            "vector of length {} does not match encoding dimension {}",
            x.len(),
            rot.dim
        )));
    }
    let block = spherical_block(angles);
    let mut out = x.to_vec();
    block.apply_blockwise(&mut out);
    Ok(out)
}

/// Inner product of two geo-rotated vectors: the attention score the
/// spherical encoding induces. Depends on the tokens' relative spherical
/// displacement, not on any absolute longitude origin.
pub fn geo_attention_score(
    q: &[f64],
    k: &[f64],
    aq: GeoAngles,
    ak: GeoAngles,
    rot: GeoRotary,
) -> Result<f64> {
    let rq = apply_geo_rotation(q, aq, rot)?;
    let rk = apply_geo_rotation(k, ak, rot)?;
    Ok(rq.iter().zip(&rk).map(|(a, b)| a * b).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(PI) - (-PI)).abs() < 1e-15);
        assert!((wrap_angle(-PI) - (-PI)).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI) - (-PI)).abs() < 1e-12);
        assert_eq!(wrap_angle(0.25), 0.25);
    }

    #[test]
    fn degrees_conversion_is_exact() {
        let a = GeoAngles::from_degrees(90.0, -180.0);
        assert_eq!(a.lat_phi, 90.0f64.to_radians());
        assert_eq!(a.lon_theta, (-180.0f64).to_radians());
    }

    #[test]
    fn sinusoidal_at_zero() {
        assert_eq!(
            sinusoidal_encoding(0, 6).unwrap(),
            vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]
        );
    }

    #[test]
    fn sinusoidal_matches_scalar_evaluation() {
        // Oracle: direct scalar sin/cos of pos / 10000^(2t/d).
        let e = sinusoidal_encoding(1, 2).unwrap();
        assert_eq!(e[0], 1.0f64.sin());
        assert_eq!(e[1], 1.0f64.cos());
        assert!((e[0] - 0.841471).abs() < 1e-6);
        assert!((e[1] - 0.540302).abs() < 1e-6);

        let e = sinusoidal_encoding(1, 4).unwrap();
        assert!((e[0] - 0.841471).abs() < 1e-6);
        assert!((e[1] - 0.540302).abs() < 1e-6);
        // 10000^(2/4) = 100, so the second pair encodes 1/100 radians.
        assert_eq!(e[2], 0.01f64.sin());
        assert_eq!(e[3], 0.01f64.cos());
        assert!((e[2] - 0.010000).abs() < 1e-6);
        assert!((e[3] - 0.999950).abs() < 1e-6);
    }

    #[test]
    fn sinusoidal_entries_bounded() {
        for pos in [0usize, 1, 17, 99] {
            for v in sinusoidal_encoding(pos, 10).unwrap() {
                assert!((-1.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn sinusoidal_rejects_bad_dims() {
        assert!(sinusoidal_encoding(3, 0).is_err());
        assert!(sinusoidal_encoding(3, 5).is_err());
    }

    #[test]
    fn rope_frequencies_match_formula() {
        let f = rope_frequencies(2).unwrap();
        assert_eq!(f.thetas(), &[0.01]);

        let f = rope_frequencies(4).unwrap();
        assert!((f.thetas()[0] - 0.1).abs() < 1e-15);
        assert!((f.thetas()[1] - 0.001).abs() < 1e-17);

        let f = rope_frequencies(8).unwrap();
        for (i, &theta) in f.thetas().iter().enumerate() {
            let expect = 10000f64.powf(-((2 * (i + 1) - 1) as f64) / 8.0);
            assert_eq!(theta, expect);
        }
    }

    #[test]
    fn rope_frequencies_decreasing_positive() {
        let f = rope_frequencies(26).unwrap();
        for w in f.thetas().windows(2) {
            assert!(w[0] > w[1]);
        }
        assert!(f.thetas().iter().all(|&t| t > 0.0));
        assert!(rope_frequencies(7).is_err());
    }

    #[test]
    fn rope_rotate_zero_position_is_identity() {
        let f = rope_frequencies(6).unwrap();
        let x = vec![0.3, -1.2, 0.0, 4.5, -2.0, 0.1];
        assert_eq!(rope_rotate(&x, 0, &f).unwrap(), x);
    }

    #[test]
    fn rope_rotate_quarter_turn() {
        let f = RopeFrequencies::from_thetas(vec![FRAC_PI_2]).unwrap();
        let y = rope_rotate(&[1.0, 0.0], 1, &f).unwrap();
        assert!(y[0].abs() < 1e-15);
        assert!((y[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rope_rotate_dimension_mismatch() {
        let f = rope_frequencies(4).unwrap();
        assert!(rope_rotate(&[1.0, 2.0], 1, &f).is_err());
    }

    #[test]
    fn euler_identity_at_zero() {
        assert_eq!(euler_rotation(0.0, 0.0, 0.0), RotationBlock3::identity());
    }

    #[test]
    fn euler_pure_x_rotation() {
        let r = euler_rotation(FRAC_PI_2, 0.0, 0.0);
        let expect = [1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0];
        for (a, b) in r.as_slice().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn euler_with_zero_y_equals_spherical_block() {
        for &(phi, theta) in &[(0.3, -1.1), (-0.7, 2.9), (1.2, 0.0)] {
            let e = euler_rotation(phi, 0.0, theta);
            let s = spherical_block(GeoAngles::new(phi, theta));
            assert_eq!(e, s);
        }
    }

    #[test]
    fn spherical_block_examples() {
        let id = spherical_block(GeoAngles::new(0.0, 0.0));
        assert_eq!(id, RotationBlock3::identity());

        let z = spherical_block(GeoAngles::new(0.0, FRAC_PI_2));
        let expect = [0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        for (a, b) in z.as_slice().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }

        let x = spherical_block(GeoAngles::new(FRAC_PI_2, 0.0));
        let expect = [1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0];
        for (a, b) in x.as_slice().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn spherical_block_is_z_times_x() {
        for &(phi, theta) in &[(0.4, 1.3), (-1.0, -2.2), (1.5, 3.0)] {
            let s = spherical_block(GeoAngles::new(phi, theta));
            let zx = RotationBlock3::rot_z(theta).matmul(&RotationBlock3::rot_x(phi));
            for (a, b) in s.as_slice().iter().zip(zx.as_slice()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn geo_rotary_rejects_bad_dims() {
        assert!(GeoRotary::new(0).is_err());
        assert!(GeoRotary::new(28).is_err());
        assert!(GeoRotary::new(27).is_ok());
    }

    #[test]
    fn apply_geo_rotation_identity_angles() {
        let rot = GeoRotary::new(6).unwrap();
        let x = vec![1.0, -2.0, 3.0, 0.5, 0.0, -0.25];
        assert_eq!(
            apply_geo_rotation(&x, GeoAngles::new(0.0, 0.0), rot).unwrap(),
            x
        );
    }

    #[test]
    fn apply_geo_rotation_quarter_longitude() {
        let rot = GeoRotary::new(3).unwrap();
        let y = apply_geo_rotation(&[1.0, 0.0, 0.0], GeoAngles::new(0.0, FRAC_PI_2), rot).unwrap();
        assert!(y[0].abs() < 1e-15);
        assert!((y[1] - 1.0).abs() < 1e-15);
        assert!(y[2].abs() < 1e-15);
    }

    #[test]
    fn apply_geo_rotation_dimension_mismatch() {
        let rot = GeoRotary::new(6).unwrap();
        assert!(apply_geo_rotation(&[1.0, 2.0, 3.0], GeoAngles::new(0.1, 0.2), rot).is_err());
    }

    #[test]
    fn attention_score_shared_angles_is_plain_dot() {
        let rot = GeoRotary::new(6).unwrap();
        let q = [0.3, -0.7, 1.1, 0.2, 0.9, -0.4];
        let k = [1.0, 0.5, -0.3, 0.8, -0.2, 0.6];
        let a = GeoAngles::from_degrees(46.4157, 21.0756);
        let score = geo_attention_score(&q, &k, a, a, rot).unwrap();
        let dot: f64 = q.iter().zip(&k).map(|(x, y)| x * y).sum();
        assert!((score - dot).abs() < 1e-12);
    }

    #[test]
    fn attention_score_longitude_shift_invariance() {
        let rot = GeoRotary::new(6).unwrap();
        let q = [0.3, -0.7, 1.1, 0.2, 0.9, -0.4];
        let k = [1.0, 0.5, -0.3, 0.8, -0.2, 0.6];
        let aq = GeoAngles::from_degrees(46.4157, 21.0756);
        let ak = GeoAngles::from_degrees(46.3733, 21.0888);
        let base = geo_attention_score(&q, &k, aq, ak, rot).unwrap();
        for shift in [0.5, -2.0, 3.1] {
            let aq2 = GeoAngles::new(aq.lat_phi, aq.lon_theta + shift);
            let ak2 = GeoAngles::new(ak.lat_phi, ak.lon_theta + shift);
            let shifted = geo_attention_score(&q, &k, aq2, ak2, rot).unwrap();
            assert!((base - shifted).abs() < 1e-10);
        }
    }

    #[test]
    fn attention_score_latitude_shift_changes_score() {
        let rot = GeoRotary::new(6).unwrap();
        let q = [0.3, -0.7, 1.1, 0.2, 0.9, -0.4];
        let k = [1.0, 0.5, -0.3, 0.8, -0.2, 0.6];
        let aq = GeoAngles::new(0.2, 0.4);
        let ak = GeoAngles::new(-0.3, 1.0);
        let base = geo_attention_score(&q, &k, aq, ak, rot).unwrap();
        let delta = 0.35;
        let aq2 = GeoAngles::new(aq.lat_phi + delta, aq.lon_theta);
        let ak2 = GeoAngles::new(ak.lat_phi + delta, ak.lon_theta);
        let shifted = geo_attention_score(&q, &k, aq2, ak2, rot).unwrap();
        assert!((base - shifted).abs() > 1e-6);
    }
}
