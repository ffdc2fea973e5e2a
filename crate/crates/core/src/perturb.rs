//! Point perturbations: the sign-preserving `pert` used to probe pixels and
//! the bounds-respecting `cyclic` update applied to the pixels an attack keeps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Bounds, Image, PixelLoc};

/// `sign` with `sign(0) = +1` (also for `-0.0`).
pub fn sign(value: f32) -> f32 {
    if value >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Perturbation magnitudes: `p` for probing, `r ∈ [0, 2]` for cyclic updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbParams {
    p: f32,
    r: f32,
}

impl PerturbParams {
    pub fn new(p: f32, r: f32) -> Result<Self> {
        check_r(r)?;
        if !p.is_finite() {
            return Err(Error::Parameter(format!("p must be finite, got {p}")));
        }
        Ok(Self { p, r })
    }

    pub fn p(&self) -> f32 {
        self.p
    }

    pub fn r(&self) -> f32 {
        self.r
    }
}

fn check_r(r: f32) -> Result<()> {
    if (0.0..=2.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("r must lie in [0, 2], got {r}")))
    }
}

/// Copy of `img` where every channel of `loc` is set to `p · sign(value)`.
/// The result may leave the valid range.
pub fn pert(img: &Image, p: f32, loc: PixelLoc) -> Result<Image> {
    img.map_pixels(std::iter::once(&loc), |v| p * sign(v))
}

/// [`pert`] applied at every location of `locs`.
pub fn pert_set<'a>(
    img: &Image,
    p: f32,
    locs: impl IntoIterator<Item = &'a PixelLoc>,
) -> Result<Image> {
    let locs: Vec<&PixelLoc> = locs.into_iter().collect();
    if locs.is_empty() {
        return Err(Error::Parameter("pert_set needs at least one location".into()));
    }
    img.map_pixels(locs, |v| p * sign(v))
}

/// `r · value`, wrapped once by `ub − lb` if it leaves `[lb, ub]`.
///
/// For `value ∈ [lb, ub]` and `lb ≤ 0 ≤ ub` the result is always in range.
pub fn cyclic(r: f32, value: f32, bounds: Bounds) -> Result<f32> {
    check_r(r)?;
    Ok(cyclic_unchecked(r, value, bounds))
}

pub(crate) fn cyclic_unchecked(r: f32, value: f32, bounds: Bounds) -> f32 {
    let (lb, ub) = (bounds.lb() as f64, bounds.ub() as f64);
    let scaled = r as f64 * value as f64;
    let wrapped = if scaled < lb {
        scaled + bounds.span()
    } else if scaled > ub {
        scaled - bounds.span()
    } else {
        scaled
    };
    // the span is inexact in f64 only when the bound exponents are far apart
    (wrapped as f32).clamp(bounds.lb(), bounds.ub())
}

/// Copy of `img` with [`cyclic`] applied to every channel of `locs`.
pub fn cyclic_pixels<'a>(
    img: &Image,
    r: f32,
    locs: impl IntoIterator<Item = &'a PixelLoc>,
) -> Result<Image> {
    check_r(r)?;
    let bounds = img.bounds();
    img.map_pixels(locs, |v| cyclic_unchecked(r, v, bounds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{diff_pixels, ImageShape};
    use proptest::prelude::*;

    fn unit() -> Bounds {
        Bounds::new(-1.0, 1.0).unwrap()
    }

    fn rgb(value: f32) -> Image {
        Image::filled(ImageShape::new(3, 4, 4), value, unit()).unwrap()
    }

    #[test]
    fn pert_sets_all_channels() {
        let img = rgb(0.5);
        let loc = PixelLoc::new(2, 3);
        let out = pert(&img, 100.0, loc).unwrap();
        for b in 1..=3 {
            assert_eq!(out.value(b, loc), 100.0);
        }
        assert_eq!(diff_pixels(&img, &out).unwrap().len(), 1);
        assert!(!out.is_valid());
        assert!(img.is_valid());
    }

    #[test]
    fn pert_sign_cases() {
        let loc = PixelLoc::new(1, 1);
        assert_eq!(pert(&rgb(-0.3), 1.0, loc).unwrap().value(1, loc), -1.0);
        assert_eq!(pert(&rgb(0.0), 5.0, loc).unwrap().value(2, loc), 5.0);
        assert_eq!(pert(&rgb(-0.0), 5.0, loc).unwrap().value(2, loc), 5.0);
    }

    #[test]
    fn pert_out_of_range_location() {
        assert!(matches!(
            pert(&rgb(0.0), 1.0, PixelLoc::new(5, 1)),
            Err(Error::Parameter(_))
        ));
        assert!(pert_set(&rgb(0.0), 1.0, &[]).is_err());
    }

    #[test]
    fn pert_set_singleton_matches_pert() {
        let img = rgb(0.25);
        let loc = PixelLoc::new(4, 2);
        assert_eq!(pert_set(&img, 3.0, &[loc]).unwrap(), pert(&img, 3.0, loc).unwrap());
    }

    #[test]
    fn pert_set_fifty_pixels() {
        let shape = ImageShape::new(1, 20, 20);
        let img = Image::filled(shape, 0.2, unit()).unwrap();
        let locs: Vec<PixelLoc> = shape.locations().step_by(8).take(50).collect();
        let out = pert_set(&img, 10.0, &locs).unwrap();
        assert_eq!(diff_pixels(&img, &out).unwrap().len(), 50);
    }

    #[test]
    fn cyclic_hand_cases() {
        assert!((cyclic(1.5, 0.8, unit()).unwrap() - (-0.8)).abs() < 1e-6);
        assert!((cyclic(1.5, -0.8, unit()).unwrap() - 0.8).abs() < 1e-6);
        assert_eq!(cyclic(1.7, 0.0, unit()).unwrap(), 0.0);
        assert_eq!(cyclic(1.0, 1.0, unit()).unwrap(), 1.0);
        assert!(cyclic(2.5, 0.1, unit()).is_err());
        assert!(cyclic(-0.1, 0.1, unit()).is_err());
        assert!(PerturbParams::new(1.0, 2.01).is_err());
        assert!(PerturbParams::new(1e6, 2.0).is_ok());
    }

    proptest! {
        #[test]
        fn cyclic_stays_in_bounds(
            r in 0.0f32..=2.0,
            lb in -10.0f32..=0.0,
            width in 1e-3f32..20.0,
            t in 0.0f32..=1.0,
        ) {
            let ub = (lb + width).max(0.0);
            prop_assume!(lb < ub);
            let bounds = Bounds::new(lb, ub).unwrap();
            let value = bounds.clamp(lb + t * (ub - lb));
            let out = cyclic(r, value, bounds).unwrap();
            prop_assert!(bounds.contains(out), "{out} outside [{lb}, {ub}]");
        }

        #[test]
        fn pert_set_is_order_independent(
            picks in prop::collection::btree_set((1u32..=6, 1u32..=5), 1..10),
            p in -50.0f32..50.0,
        ) {
            let shape = ImageShape::new(2, 6, 5);
            let data: Vec<f32> = (0..shape.len()).map(|i| ((i * 37 % 11) as f32 - 5.0) / 5.0).collect();
            let img = Image::new(shape, data, unit()).unwrap();
            let locs: Vec<PixelLoc> = picks.iter().map(|&(x, y)| PixelLoc::new(x, y)).collect();
            let forward = pert_set(&img, p, &locs).unwrap();
            let mut iterated = img.clone();
            for loc in locs.iter().rev() {
                iterated = pert(&iterated, p, *loc).unwrap();
            }
            prop_assert_eq!(&forward, &iterated);
            let changed = diff_pixels(&img, &forward).unwrap();
            prop_assert!(changed.iter().all(|l| locs.contains(l)));
        }
    }
}
