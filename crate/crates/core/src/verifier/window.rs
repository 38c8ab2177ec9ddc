use serde::{Deserialize, Serialize};

use super::VerifierError;

pub const WINDOW_COUNT: usize = 55;
const SCALES: usize = 5;

/// Half-open window `[y, y + side) x [x, x + side)` on a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub x: usize,
    pub y: usize,
    pub side: usize,
}

impl Window {
    pub fn area(&self) -> usize {
        self.side * self.side
    }
}

/// Multi-scale pyramid: scale `s` in `1..=5` places `s x s` square windows of
/// side `ceil(2 * n / (s + 1))` evenly from corner to corner. 1 + 4 + 9 + 16 + 25 = 55.
///
/// Order is scale, then row, then column.
pub fn generate_windows(height: usize, width: usize) -> Result<Vec<Window>, VerifierError> {
    if height != width || height == 0 {
        return Err(VerifierError::NonSquareMap { height, width });
    }
    let n = height;
    let mut out = Vec::with_capacity(WINDOW_COUNT);
    for s in 1..=SCALES {
        let side = (2 * n).div_ceil(s + 1).clamp(1, n);
        let slack = n - side;
        let at = |i: usize| -> usize {
            if s == 1 {
                0
            } else {
                (i as f64 * slack as f64 / (s - 1) as f64).round() as usize
            }
        };
        for i in 0..s {
            for j in 0..s {
                out.push(Window {
                    x: at(j),
                    y: at(i),
                    side,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_by_eight_has_55_windows() {
        let w = generate_windows(8, 8).unwrap();
        assert_eq!(w.len(), 55);
        assert_eq!(w[0], Window { x: 0, y: 0, side: 8 });
        let sides: Vec<usize> = [0, 1, 5, 14, 30].iter().map(|&i| w[i].side).collect();
        assert_eq!(sides, [8, 6, 4, 4, 3]);
        // The last window of every scale touches the far corner.
        for end in [0, 4, 13, 29, 54] {
            assert_eq!(w[end].x + w[end].side, 8);
            assert_eq!(w[end].y + w[end].side, 8);
        }
    }

    #[test]
    fn windows_stay_in_bounds() {
        for n in 1..20 {
            let w = generate_windows(n, n).unwrap();
            assert_eq!(w.len(), 55);
            assert!(w
                .iter()
                .all(|w| w.area() >= 1 && w.x + w.side <= n && w.y + w.side <= n));
        }
    }

    #[test]
    fn non_square_rejected() {
        assert!(matches!(
            generate_windows(8, 6),
            Err(VerifierError::NonSquareMap { .. })
        ));
    }
}
