use serde::{Deserialize, Serialize};

/// Which quantity selects between `sin` and `cos`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    /// `sin` on even dimensions, `cos` on odd ones, with dimension pairs
    /// sharing a frequency.
    #[default]
    Dimension,
    /// `sin` for every dimension when `floor(x)` is even, else `cos`.
    Position,
}

fn sinusoid_into(x: f64, parity: Parity, out: &mut [f64]) {
    let d = out.len() as f64;
    match parity {
        Parity::Dimension => {
            for (i, o) in out.iter_mut().enumerate() {
                let pair = (i / 2) as f64;
                let arg = x / 10000f64.powf(2.0 * pair / d);
                *o += if i % 2 == 0 { arg.sin() } else { arg.cos() };
            }
        }
        Parity::Position => {
            let even = (x.floor() as i64).rem_euclid(2) == 0;
            for (i, o) in out.iter_mut().enumerate() {
                let arg = x / 10000f64.powf(2.0 * i as f64 / d);
                *o += if even { arg.sin() } else { arg.cos() };
            }
        }
    }
}

/// `v_pos(j) + v_temp(t)`, each component of either part in [-1, 1].
pub fn spatio_temporal_encoding(set_index: usize, time: f64, d_model: usize, parity: Parity) -> Vec<f64> {
    let mut v = vec![0.0; d_model];
    sinusoid_into(set_index as f64, parity, &mut v);
    sinusoid_into(time, parity, &mut v);
    v
}
