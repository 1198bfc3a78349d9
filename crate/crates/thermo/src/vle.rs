//! Extended Raoult's law, `p y_i = x_i γ_i p_i^s`, without vapor-phase
//! non-ideality or Poynting correction.

use crate::antoine::{antoine_vapor_pressure, AntoineCoefficients};
use crate::{Result, ThermoError};

/// Activity coefficient from one VLE measurement.
pub fn gamma_from_vle(p: f64, y: f64, p_sat: f64, x: f64) -> Result<f64> {
    if x <= 0.0 {
        return Err(ThermoError::InfiniteDilution);
    }
    if p_sat <= 0.0 || !p_sat.is_finite() {
        return Err(ThermoError::InvalidState(format!("vapor pressure {p_sat} kPa")));
    }
    Ok(p * y / (p_sat * x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BubblePoint {
    /// kPa
    pub p: f64,
    pub y: Vec<f64>,
    /// Some vapor pressure was extrapolated outside its Antoine range.
    pub out_of_range: bool,
}

/// Bubble pressure and vapor composition at `t` for liquid `x`.
///
/// `ln_gamma` maps `(x, t)` to the liquid's log activity coefficients.
pub fn bubble_point<F>(
    ln_gamma: F,
    antoine: &[AntoineCoefficients],
    t: f64,
    x: &[f64],
) -> Result<BubblePoint>
where
    F: FnOnce(&[f64], f64) -> Result<Vec<f64>>,
{
    if antoine.len() != x.len() {
        return Err(ThermoError::InvalidState(format!(
            "{} Antoine sets for {} components",
            antoine.len(),
            x.len()
        )));
    }
    let lng = if x.len() == 1 { vec![0.0] } else { ln_gamma(x, t)? };
    let mut out_of_range = false;
    let mut partial = Vec::with_capacity(x.len());
    for ((c, &xi), &lg) in antoine.iter().zip(x).zip(&lng) {
        let ps = antoine_vapor_pressure(c, t)?;
        out_of_range |= ps.out_of_range;
        partial.push(xi * lg.exp() * ps.kpa);
    }
    let p: f64 = partial.iter().sum();
    let y = partial.iter().map(|v| v / p).collect();
    Ok(BubblePoint { p, y, out_of_range })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ComponentId;

    fn flat(p: f64) -> AntoineCoefficients {
        AntoineCoefficients {
            component_id: ComponentId::from("0"),
            a: p.log10(),
            b: 0.0,
            c: 0.0,
            t_min: 200.0,
            t_max: 500.0,
        }
    }

    #[test]
    fn raoult_examples() {
        assert_eq!(gamma_from_vle(50.0, 0.4, 40.0, 0.5).unwrap(), 1.0);
        assert_eq!(gamma_from_vle(100.0, 0.5, 25.0, 0.5).unwrap(), 4.0);
        assert!(matches!(
            gamma_from_vle(100.0, 0.5, 25.0, 0.0),
            Err(ThermoError::InfiniteDilution)
        ));
    }

    #[test]
    fn ideal_equal_pressures_give_y_equal_x() {
        let ant = [flat(80.0), flat(80.0)];
        let bp = bubble_point(|_, _| Ok(vec![0.0, 0.0]), &ant, 300.0, &[0.3, 0.7]).unwrap();
        assert!((bp.y[0] - 0.3).abs() < 1e-15);
        assert!((bp.p - 80.0).abs() < 1e-12);
    }

    #[test]
    fn pure_component() {
        let bp = bubble_point(|_, _| unreachable!(), &[flat(42.0)], 300.0, &[1.0]).unwrap();
        assert!((bp.p - 42.0).abs() < 1e-12);
        assert_eq!(bp.y, vec![1.0]);
    }

    #[test]
    fn margules_direct_formula() {
        let a = 1.0;
        let (x1, x2) = (0.3, 0.7);
        let ant = [flat(100.0), flat(50.0)];
        let bp = bubble_point(
            |x, _| Ok(vec![a * x[1] * x[1], a * x[0] * x[0]]),
            &ant,
            300.0,
            &[x1, x2],
        )
        .unwrap();
        let g1 = (a * x2 * x2).exp();
        let g2 = (a * x1 * x1).exp();
        let p = x1 * g1 * 100.0 + x2 * g2 * 50.0;
        assert!((bp.p - p).abs() < 1e-12 * p);
        assert!((bp.y[0] - x1 * g1 * 100.0 / p).abs() < 1e-14);
        assert!((bp.y.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn roundtrip_recovers_gamma() {
        let ant = [flat(120.0), flat(35.0), flat(70.0)];
        let x = [0.2, 0.5, 0.3];
        let lng = vec![0.4, -0.2, 1.1];
        let bp = bubble_point(|_, _| Ok(lng.clone()), &ant, 300.0, &x).unwrap();
        for i in 0..3 {
            let ps = antoine_vapor_pressure(&ant[i], 300.0).unwrap().kpa;
            let g = gamma_from_vle(bp.p, bp.y[i], ps, x[i]).unwrap();
            assert!((g - lng[i].exp()).abs() < 1e-12);
        }
    }
}
