//! Class-id to RGB color tables.

use serde::{Deserialize, Serialize};

use crate::error::{MadmError, Result};

/// Minimum L-infinity distance between any two palette entries.
pub const MIN_COLOR_DISTANCE: u8 = 16;

/// The Cityscapes training-id color table, in id order.
pub const CITYSCAPES_COLORS: [[u8; 3]; 19] = [
    [128, 64, 128],  // road
    [244, 35, 232],  // sidewalk
    [70, 70, 70],    // building
    [102, 102, 156], // wall
    [190, 153, 153], // fence
    [153, 153, 153], // pole
    [250, 170, 30],  // traffic light
    [220, 220, 0],   // traffic sign
    [107, 142, 35],  // vegetation
    [152, 251, 152], // terrain
    [70, 130, 180],  // sky
    [220, 20, 60],   // person
    [255, 0, 0],     // rider
    [0, 0, 142],     // car
    [0, 0, 70],      // truck
    [0, 60, 100],    // bus
    [0, 80, 100],    // train
    [0, 0, 230],     // motorcycle
    [119, 11, 32],   // bicycle
];

/// An injective class-to-color map plus a distinct color for ignored
/// pixels. Construction guarantees every pair of colors (the ignore color
/// included) differs by at least [`MIN_COLOR_DISTANCE`] in some channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette {
    colors: Vec<[u8; 3]>,
    ignore_color: [u8; 3],
}

impl Palette {
    pub fn new(colors: Vec<[u8; 3]>, ignore_color: [u8; 3]) -> Result<Self> {
        if colors.is_empty() {
            return Err(MadmError::Palette("palette has no colors".into()));
        }
        let all: Vec<[u8; 3]> = colors.iter().copied().chain([ignore_color]).collect();
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                let d = linf(all[i], all[j]);
                if d < MIN_COLOR_DISTANCE {
                    let name = |k: usize| {
                        if k == colors.len() {
                            "ignore".to_string()
                        } else {
                            format!("class {k}")
                        }
                    };
                    return Err(MadmError::Palette(format!(
                        "{} {:?} and {} {:?} are only {d} apart (need {MIN_COLOR_DISTANCE})",
                        name(i),
                        all[i],
                        name(j),
                        all[j]
                    )));
                }
            }
        }
        Ok(Self {
            colors,
            ignore_color,
        })
    }

    /// First `k` Cityscapes colors with black for ignored pixels.
    pub fn cityscapes(k: usize) -> Result<Self> {
        if k == 0 || k > CITYSCAPES_COLORS.len() {
            return Err(MadmError::Palette(format!(
                "default palette covers 1..={} classes, asked for {k}",
                CITYSCAPES_COLORS.len()
            )));
        }
        Self::new(CITYSCAPES_COLORS[..k].to_vec(), [0, 0, 0])
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.colors
    }

    pub fn ignore_color(&self) -> [u8; 3] {
        self.ignore_color
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    /// Smallest Euclidean distance between two entries (ignore color
    /// included), in 8-bit units. Any color perturbation with Euclidean
    /// norm below half of this decodes to the original entry.
    pub fn decode_margin(&self) -> f64 {
        let all: Vec<[u8; 3]> = self.colors.iter().copied().chain([self.ignore_color]).collect();
        let mut best = f64::INFINITY;
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                best = best.min(l2(all[i], all[j]));
            }
        }
        best
    }

    /// JSON list of `[r, g, b]` triples, index = class id.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.colors).expect("palette serializes")
    }

    /// Parses the JSON list form; the ignore color is supplied separately.
    pub fn from_json(json: &str, ignore_color: [u8; 3]) -> Result<Self> {
        let colors: Vec<[u8; 3]> = serde_json::from_str(json)?;
        Self::new(colors, ignore_color)
    }
}

/// On-disk form used in config files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaletteSpec {
    pub colors: Vec<[u8; 3]>,
    pub ignore_color: [u8; 3],
}

impl TryFrom<PaletteSpec> for Palette {
    type Error = MadmError;

    fn try_from(spec: PaletteSpec) -> Result<Self> {
        Palette::new(spec.colors, spec.ignore_color)
    }
}

fn linf(a: [u8; 3], b: [u8; 3]) -> u8 {
    (0..3).map(|c| a[c].abs_diff(b[c])).max().unwrap_or(0)
}

fn l2(a: [u8; 3], b: [u8; 3]) -> f64 {
    (0..3)
        .map(|c| (a[c] as f64 - b[c] as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_cityscapes_table_respects_margin() {
        let p = Palette::cityscapes(19).unwrap();
        assert_eq!(p.len(), 19);
        assert!(p.decode_margin() >= MIN_COLOR_DISTANCE as f64);
    }

    #[test]
    fn rejects_duplicates_and_near_colors() {
        assert!(Palette::new(vec![[1, 2, 3], [1, 2, 3]], [0, 0, 0]).is_err());
        assert!(Palette::new(vec![[100, 100, 100], [115, 100, 100]], [0, 0, 0]).is_err());
        assert!(Palette::new(vec![[100, 100, 100], [116, 100, 100]], [0, 0, 0]).is_ok());
        // ignore color too close to a class color
        assert!(Palette::new(vec![[5, 5, 5]], [0, 0, 0]).is_err());
        assert!(Palette::cityscapes(0).is_err());
        assert!(Palette::cityscapes(20).is_err());
    }

    #[test]
    fn json_form_is_index_ordered_triples() {
        let p = Palette::cityscapes(2).unwrap();
        assert_eq!(p.to_json(), "[[128,64,128],[244,35,232]]");
        assert_eq!(Palette::from_json(&p.to_json(), [0, 0, 0]).unwrap(), p);
    }
}
