//! Unit-variance constellations and the modulo lattice parameter.

use num_complex::Complex64;
use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Modulation {
    #[default]
    Qpsk,
    Qam16,
}

impl Modulation {
    /// Modulo parameter `λ` for unit-variance symbols: `2√2` for QPSK and
    /// `4√10/5` for 16-QAM.
    pub fn lambda(self) -> f64 {
        match self {
            Modulation::Qpsk => 2.0 * 2f64.sqrt(),
            Modulation::Qam16 => 4.0 * 10f64.sqrt() / 5.0,
        }
    }

    /// Constellation points, average power exactly 1.
    pub fn points(self) -> Vec<Complex64> {
        match self {
            Modulation::Qpsk => {
                let a = std::f64::consts::FRAC_1_SQRT_2;
                vec![
                    Complex64::new(a, a),
                    Complex64::new(a, -a),
                    Complex64::new(-a, a),
                    Complex64::new(-a, -a),
                ]
            }
            Modulation::Qam16 => {
                let norm = 1.0 / 10f64.sqrt();
                let levels = [-3.0, -1.0, 1.0, 3.0];
                let mut pts = Vec::with_capacity(16);
                for &re in &levels {
                    for &im in &levels {
                        pts.push(Complex64::new(re * norm, im * norm));
                    }
                }
                pts
            }
        }
    }

    pub fn draw_symbol(self, rng: &mut impl Rng) -> Complex64 {
        let pts = self.points();
        pts[rng.random_range(0..pts.len())]
    }

    /// Hard decision to the nearest constellation point.
    pub fn detect(self, y: Complex64) -> Complex64 {
        let pts = self.points();
        *pts.iter()
            .min_by(|a, b| {
                (y - **a)
                    .norm_sqr()
                    .partial_cmp(&(y - **b).norm_sqr())
                    .expect("finite distances")
            })
            .expect("nonempty constellation")
    }
}

/// Lattice parameter for a supported modulation name.
pub fn lambda_for(modulation: Modulation) -> f64 {
    modulation.lambda()
}

impl std::str::FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qpsk" => Ok(Modulation::Qpsk),
            "qam16" | "16qam" => Ok(Modulation::Qam16),
            other => Err(Error::invalid(format!("unsupported modulation `{other}`"))),
        }
    }
}

impl std::fmt::Display for Modulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Modulation::Qpsk => write!(f, "qpsk"),
            Modulation::Qam16 => write!(f, "qam16"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::test_rng;

    #[test]
    fn lambda_constants() {
        assert!((Modulation::Qpsk.lambda() - 2.8284271247461903).abs() < 1e-12);
        assert!((Modulation::Qam16.lambda() - 2.5298221281347035).abs() < 1e-12);
        assert!(Modulation::Qpsk.lambda() > 0.0 && Modulation::Qam16.lambda() > 0.0);
    }

    #[test]
    fn constellations_have_unit_power() {
        for m in [Modulation::Qpsk, Modulation::Qam16] {
            let pts = m.points();
            let power: f64 = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / pts.len() as f64;
            assert!((power - 1.0).abs() < 1e-12, "{m}: power {power}");
            // Every point sits strictly inside the modulo fundamental region.
            for p in &pts {
                assert!(p.re.abs() < m.lambda() / 2.0);
                assert!(p.im.abs() < m.lambda() / 2.0);
            }
        }
    }

    #[test]
    fn detection_recovers_exact_points() {
        let mut rng = test_rng(3);
        for m in [Modulation::Qpsk, Modulation::Qam16] {
            for _ in 0..100 {
                let s = m.draw_symbol(&mut rng);
                assert_eq!(m.detect(s), s);
            }
        }
    }

    #[test]
    fn parse_and_display_round_trip() {
        assert_eq!("qpsk".parse::<Modulation>().unwrap(), Modulation::Qpsk);
        assert_eq!("QAM16".parse::<Modulation>().unwrap(), Modulation::Qam16);
        assert!("qam64".parse::<Modulation>().is_err());
        assert_eq!(Modulation::Qpsk.to_string(), "qpsk");
    }
}
