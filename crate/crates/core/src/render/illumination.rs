use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RenderError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalLight {
    /// Unit vector pointing from the surface towards the light.
    pub direction: Vector3<f64>,
    pub radiance: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlluminationCondition {
    pub condition_id: String,
    pub directional_lights: Vec<DirectionalLight>,
    pub ambient: [f64; 3],
}

impl IlluminationCondition {
    pub fn new(
        condition_id: impl Into<String>,
        directional_lights: Vec<DirectionalLight>,
        ambient: [f64; 3],
    ) -> Result<Self, RenderError> {
        let c = Self { condition_id: condition_id.into(), directional_lights, ambient };
        c.validate()?;
        Ok(c)
    }

    pub fn dark(condition_id: impl Into<String>) -> Self {
        Self { condition_id: condition_id.into(), directional_lights: Vec::new(), ambient: [0.0; 3] }
    }

    /// Neutral lighting used when rendering objects for feature construction.
    pub fn reference() -> Self {
        let d1 = Vector3::new(0.4, -0.3, 0.85).normalize();
        let d2 = Vector3::new(-0.5, 0.6, 0.4).normalize();
        Self {
            condition_id: "reference".into(),
            directional_lights: vec![
                DirectionalLight { direction: d1, radiance: [1.6; 3] },
                DirectionalLight { direction: d2, radiance: [0.8; 3] },
            ],
            ambient: [0.45; 3],
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        for l in &self.directional_lights {
            if (l.direction.norm() - 1.0).abs() > 1e-6 {
                return Err(RenderError::InvalidIllumination("light direction not unit length".into()));
            }
            if l.radiance.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(RenderError::InvalidIllumination("negative or non-finite radiance".into()));
            }
        }
        if self.ambient.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(RenderError::InvalidIllumination("negative or non-finite ambient".into()));
        }
        Ok(())
    }

    /// Sum of all light and ambient radiance components.
    pub fn total_radiance(&self) -> f64 {
        self.directional_lights.iter().map(|l| l.radiance.iter().sum::<f64>()).sum::<f64>()
            + self.ambient.iter().sum::<f64>()
    }

    /// Every radiance (including ambient) multiplied by `k ≥ 0`.
    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        for l in &mut out.directional_lights {
            l.radiance = l.radiance.map(|v| v * k);
        }
        out.ambient = out.ambient.map(|v| v * k);
        out
    }
}

/// Parameter ranges for a randomized illumination sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepRanges {
    pub lights: (usize, usize),
    pub intensity: (f64, f64),
    pub elevation_deg: (f64, f64),
    /// Maximum HSV saturation of light colors; 0 gives white lights.
    pub max_saturation: f64,
    pub ambient: (f64, f64),
}

impl Default for SweepRanges {
    fn default() -> Self {
        Self { lights: (1, 3), intensity: (0.3, 3.0), elevation_deg: (10.0, 80.0), max_saturation: 0.5, ambient: (0.03, 0.3) }
    }
}

impl SweepRanges {
    fn validate(&self) -> Result<(), RenderError> {
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        let ok = self.lights.0 <= self.lights.1
            && self.lights.1 <= 8
            && ordered(self.intensity)
            && self.intensity.0 >= 0.0
            && ordered(self.elevation_deg)
            && self.elevation_deg.0 >= -90.0
            && self.elevation_deg.1 <= 90.0
            && (0.0..=1.0).contains(&self.max_saturation)
            && ordered(self.ambient)
            && self.ambient.0 >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(RenderError::BadRange(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlluminationSweep {
    pub conditions: Vec<IlluminationCondition>,
    /// Index of the condition with maximal total radiance; the evaluation reference.
    pub brightest: usize,
}

fn tint(rng: &mut ChaCha8Rng, max_saturation: f64) -> [f64; 3] {
    let h: f64 = rng.gen();
    let s: f64 = if max_saturation > 0.0 { rng.gen_range(0.0..=max_saturation) } else { 0.0 };
    // HSV with V = 1
    let h6 = h * 6.0;
    let x = s * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (s, x, 0.0),
        1 => (x, s, 0.0),
        2 => (0.0, s, x),
        3 => (0.0, x, s),
        4 => (x, 0.0, s),
        _ => (s, 0.0, x),
    };
    let m = 1.0 - s;
    [r + m, g + m, b + m]
}

/// Randomized sweep of `count` conditions varying light direction, intensity
/// and color independently.
pub fn sample_illumination_sweep(count: usize, seed: u64, ranges: &SweepRanges) -> Result<IlluminationSweep, RenderError> {
    if count < 2 {
        return Err(RenderError::BadRange(format!("sweep needs at least 2 conditions, got {count}")));
    }
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut conditions = Vec::with_capacity(count);
    for i in 0..count {
        let n = rng.gen_range(ranges.lights.0..=ranges.lights.1);
        let lights = (0..n)
            .map(|_| {
                let el = rng.gen_range(ranges.elevation_deg.0..=ranges.elevation_deg.1).to_radians();
                let az = rng.gen_range(0.0..std::f64::consts::TAU);
                let direction = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()).normalize();
                let intensity = rng.gen_range(ranges.intensity.0..=ranges.intensity.1);
                let color = tint(&mut rng, ranges.max_saturation);
                DirectionalLight { direction, radiance: color.map(|c| c * intensity) }
            })
            .collect();
        let a = rng.gen_range(ranges.ambient.0..=ranges.ambient.1);
        let ambient = tint(&mut rng, ranges.max_saturation * 0.5).map(|c| c * a);
        conditions.push(IlluminationCondition { condition_id: format!("illum_{i:02}"), directional_lights: lights, ambient });
    }
    let brightest = conditions
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_radiance().total_cmp(&b.1.total_radiance()).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .expect("non-empty sweep");
    Ok(IlluminationSweep { conditions, brightest })
}
