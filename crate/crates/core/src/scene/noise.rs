//! Seeded value noise on the integer lattice.

use nalgebra::Vector3;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn lattice_value(seed: u64, i: i64, j: i64, k: i64) -> f64 {
    let mut h = mix(seed ^ 0x9e37_79b9_7f4a_7c15);
    h = mix(h ^ i as u64);
    h = mix(h ^ (j as u64).rotate_left(21));
    h = mix(h ^ (k as u64).rotate_left(42));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Smoothly interpolated lattice noise in `[0, 1)`.
pub fn value_noise(seed: u64, p: &Vector3<f64>) -> f64 {
    let base = p.map(f64::floor);
    let (i, j, k) = (base.x as i64, base.y as i64, base.z as i64);
    let f = p - base;
    let (u, v, w) = (fade(f.x), fade(f.y), fade(f.z));
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let c = |di: i64, dj: i64, dk: i64| lattice_value(seed, i + di, j + dj, k + dk);
    let x00 = lerp(c(0, 0, 0), c(1, 0, 0), u);
    let x10 = lerp(c(0, 1, 0), c(1, 1, 0), u);
    let x01 = lerp(c(0, 0, 1), c(1, 0, 1), u);
    let x11 = lerp(c(0, 1, 1), c(1, 1, 1), u);
    lerp(lerp(x00, x10, v), lerp(x01, x11, v), w)
}

/// Octave sum normalised back to `[0, 1)`; zero octaves gives the flat 0.5.
pub fn fbm(seed: u64, p: &Vector3<f64>, octaves: u32) -> f64 {
    if octaves == 0 {
        return 0.5;
    }
    let mut sum = 0.0;
    let mut norm = 0.0;
    let mut amp = 1.0;
    let mut freq = 1.0;
    for o in 0..octaves {
        sum += amp * value_noise(seed.wrapping_add(o as u64), &(p * freq));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        let p = Vector3::new(1.25, -3.5, 7.75);
        assert_eq!(value_noise(7, &p), value_noise(7, &p));
        assert_ne!(value_noise(7, &p), value_noise(8, &p));
        for k in 0..1000 {
            let q = Vector3::new(k as f64 * 0.37, k as f64 * -0.11, k as f64 * 0.05);
            let v = fbm(3, &q, 4);
            assert!((0.0..1.0).contains(&v));
        }
    }

    #[test]
    fn continuous_across_cells() {
        let a = value_noise(1, &Vector3::new(2.0 - 1e-9, 0.3, 0.4));
        let b = value_noise(1, &Vector3::new(2.0 + 1e-9, 0.3, 0.4));
        assert!((a - b).abs() < 1e-7);
    }
}
