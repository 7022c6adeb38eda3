use serde::{Deserialize, Serialize};

use super::{BBox, BinaryMask, GeometryError, RasterImage, Rgb};

/// How the region outside the user box is removed before proposal and detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IsolationMode {
    /// Original image, untouched.
    Full,
    /// Everything outside the box painted with the fill color; no crop.
    RectMask,
    /// Box region cut out of the image.
    Crop,
    /// Segmenter mask applied, then cropped to the box.
    SegmentMask,
}

impl IsolationMode {
    pub const ALL: [IsolationMode; 4] = [Self::Full, Self::RectMask, Self::Crop, Self::SegmentMask];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::RectMask => "rect_mask",
            Self::Crop => "crop",
            Self::SegmentMask => "segment_mask",
        }
    }

    pub fn needs_mask(&self) -> bool {
        matches!(self, Self::SegmentMask)
    }

    /// Whether the attended image is cut down to the source box.
    pub fn crops(&self) -> bool {
        matches!(self, Self::Crop | Self::SegmentMask)
    }
}

impl std::fmt::Display for IsolationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for IsolationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s || m.as_str().replace('_', "-") == s)
            .ok_or_else(|| {
                format!("unknown isolation mode `{s}` (full, rect_mask, crop, segment_mask)")
            })
    }
}

/// Output of region isolation plus what produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct AttendedImage {
    pub image: RasterImage,
    pub mode: IsolationMode,
    pub source_box: BBox,
    pub fill: Rgb,
}

impl AttendedImage {
    /// Offset that maps attended-space coordinates back onto the original image.
    pub fn offset(&self) -> (u32, u32) {
        if self.mode.crops() {
            (self.source_box.x_min(), self.source_box.y_min())
        } else {
            (0, 0)
        }
    }

    pub fn to_original(&self, b: &BBox) -> BBox {
        let (dx, dy) = self.offset();
        b.translate(dx as i64, dy as i64)
            .expect("positive translation keeps a valid box")
    }

    /// Inverse of [`to_original`](Self::to_original); `None` when the box falls
    /// outside the attended frame.
    pub fn to_attended(&self, b: &BBox) -> Option<BBox> {
        let (dx, dy) = self.offset();
        let moved = b.translate(-(dx as i64), -(dy as i64)).ok()?;
        moved
            .fits(self.image.width(), self.image.height())
            .then_some(moved)
    }
}

/// Keeps pixels where the mask is set and paints the rest with `fill`.
pub fn apply_mask(
    image: &RasterImage,
    mask: &BinaryMask,
    fill: Rgb,
) -> Result<RasterImage, GeometryError> {
    if mask.width() != image.width() || mask.height() != image.height() {
        return Err(GeometryError::MaskShape {
            mask_w: mask.width(),
            mask_h: mask.height(),
            image_w: image.width(),
            image_h: image.height(),
        });
    }
    let mut pixels = image.pixels().to_vec();
    for (px, keep) in pixels.chunks_exact_mut(3).zip(mask.bits()) {
        if !keep {
            px.copy_from_slice(&fill.0);
        }
    }
    RasterImage::new(image.width(), image.height(), pixels)
}

pub fn crop(image: &RasterImage, bbox: &BBox) -> Result<RasterImage, GeometryError> {
    bbox.check_fits(image.width(), image.height())?;
    let row_bytes = image.width() as usize * 3;
    let mut pixels = Vec::with_capacity(bbox.area() as usize * 3);
    for y in bbox.y_min()..bbox.y_max() {
        let start = y as usize * row_bytes + bbox.x_min() as usize * 3;
        pixels.extend_from_slice(&image.pixels()[start..start + bbox.width() as usize * 3]);
    }
    RasterImage::new(bbox.width(), bbox.height(), pixels)
}

pub fn isolate_region(
    image: &RasterImage,
    bbox: &BBox,
    mask: Option<&BinaryMask>,
    mode: IsolationMode,
    fill: Rgb,
) -> Result<AttendedImage, GeometryError> {
    bbox.check_fits(image.width(), image.height())?;
    let isolated = match (mode, mask) {
        (IsolationMode::SegmentMask, None) => return Err(GeometryError::MissingMask),
        (m @ (IsolationMode::Full | IsolationMode::Crop | IsolationMode::RectMask), Some(_)) => {
            return Err(GeometryError::SpuriousMask(m))
        }
        (IsolationMode::SegmentMask, Some(mask)) => crop(&apply_mask(image, mask, fill)?, bbox)?,
        (IsolationMode::Full, None) => image.clone(),
        (IsolationMode::Crop, None) => crop(image, bbox)?,
        (IsolationMode::RectMask, None) => {
            let mut pixels = image.pixels().to_vec();
            let w = image.width();
            for (i, px) in pixels.chunks_exact_mut(3).enumerate() {
                let (x, y) = ((i as u32) % w, (i as u32) / w);
                if !bbox.covers(x, y) {
                    px.copy_from_slice(&fill.0);
                }
            }
            RasterImage::new(image.width(), image.height(), pixels)?
        }
    };
    Ok(AttendedImage {
        image: isolated,
        mode,
        source_box: *bbox,
        fill,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture_2x2() -> RasterImage {
        RasterImage::new(2, 2, vec![10, 10, 10, 20, 20, 20, 30, 30, 30, 40, 40, 40]).unwrap()
    }

    fn diagonal_mask() -> BinaryMask {
        BinaryMask::new(2, 2, vec![true, false, false, true]).unwrap()
    }

    fn gradient(w: u32, h: u32) -> RasterImage {
        RasterImage::from_fn(w, h, |x, y| Rgb([x as u8, y as u8, 0])).unwrap()
    }

    /// Per-pixel reference used to derive the expected buffers below.
    fn mask_oracle(img: &RasterImage, mask: &BinaryMask, fill: Rgb) -> Vec<u8> {
        let mut out = Vec::new();
        for y in 0..img.height() {
            for x in 0..img.width() {
                let px = if mask.get(x, y) {
                    img.pixel(x, y)
                } else {
                    fill
                };
                out.extend_from_slice(&px.0);
            }
        }
        out
    }

    #[test]
    fn apply_mask_examples() {
        let img = fixture_2x2();
        let out = apply_mask(&img, &diagonal_mask(), Rgb::BLACK).unwrap();
        assert_eq!(out.pixels(), &[10, 10, 10, 0, 0, 0, 0, 0, 0, 40, 40, 40]);
        assert_eq!(
            out.pixels(),
            mask_oracle(&img, &diagonal_mask(), Rgb::BLACK)
        );

        let ones = BinaryMask::new(2, 2, vec![true; 4]).unwrap();
        assert_eq!(apply_mask(&img, &ones, Rgb([1, 2, 3])).unwrap(), img);
        let zeros = BinaryMask::new(2, 2, vec![false; 4]).unwrap();
        assert_eq!(
            apply_mask(&img, &zeros, Rgb::BLACK).unwrap(),
            RasterImage::filled(2, 2, Rgb::BLACK).unwrap()
        );
    }

    #[test]
    fn apply_mask_shape_mismatch() {
        let mask = BinaryMask::new(3, 1, vec![true; 3]).unwrap();
        assert!(matches!(
            apply_mask(&fixture_2x2(), &mask, Rgb::BLACK),
            Err(GeometryError::MaskShape { .. })
        ));
    }

    #[test]
    fn crop_examples() {
        let img = gradient(4, 4);
        assert_eq!(crop(&img, &BBox::new(0, 0, 4, 4).unwrap()).unwrap(), img);
        let c = crop(&img, &BBox::new(1, 1, 3, 3).unwrap()).unwrap();
        assert_eq!((c.width(), c.height()), (2, 2));
        assert_eq!(c.pixel(0, 0), Rgb([1, 1, 0]));
        assert_eq!(c.pixel(1, 1), Rgb([2, 2, 0]));
        assert!(matches!(
            crop(&img, &BBox::new(2, 2, 5, 4).unwrap()),
            Err(GeometryError::BoxOutOfBounds { .. })
        ));
    }

    #[test]
    fn isolate_region_modes() {
        let img = gradient(6, 5);
        let whole = img.frame();
        let full = isolate_region(
            &img,
            &BBox::new(1, 1, 3, 3).unwrap(),
            None,
            IsolationMode::Full,
            Rgb::BLACK,
        )
        .unwrap();
        assert_eq!(full.image, img);
        assert_eq!(full.mode, IsolationMode::Full);
        assert_eq!(full.offset(), (0, 0));

        let rect =
            isolate_region(&img, &whole, None, IsolationMode::RectMask, Rgb([9, 9, 9])).unwrap();
        assert_eq!(rect.image, img);

        let bbox = BBox::new(1, 2, 4, 5).unwrap();
        let rect =
            isolate_region(&img, &bbox, None, IsolationMode::RectMask, Rgb([9, 9, 9])).unwrap();
        for y in 0..5 {
            for x in 0..6 {
                let want = if bbox.covers(x, y) {
                    img.pixel(x, y)
                } else {
                    Rgb([9, 9, 9])
                };
                assert_eq!(rect.image.pixel(x, y), want);
            }
        }

        let seg = isolate_region(
            &fixture_2x2(),
            &BBox::new(0, 0, 2, 2).unwrap(),
            Some(&diagonal_mask()),
            IsolationMode::SegmentMask,
            Rgb::BLACK,
        )
        .unwrap();
        assert_eq!(
            seg.image.pixels(),
            &[10, 10, 10, 0, 0, 0, 0, 0, 0, 40, 40, 40]
        );
    }

    #[test]
    fn isolate_region_mask_contract() {
        let img = fixture_2x2();
        let bbox = img.frame();
        assert_eq!(
            isolate_region(&img, &bbox, None, IsolationMode::SegmentMask, Rgb::BLACK),
            Err(GeometryError::MissingMask)
        );
        for mode in [
            IsolationMode::Full,
            IsolationMode::Crop,
            IsolationMode::RectMask,
        ] {
            assert_eq!(
                isolate_region(&img, &bbox, Some(&diagonal_mask()), mode, Rgb::BLACK),
                Err(GeometryError::SpuriousMask(mode))
            );
        }
    }

    #[test]
    fn attended_coordinates_roundtrip() {
        let img = gradient(20, 20);
        let bbox = BBox::new(5, 6, 15, 18).unwrap();
        let att = isolate_region(&img, &bbox, None, IsolationMode::Crop, Rgb::BLACK).unwrap();
        let inner = BBox::new(1, 1, 4, 4).unwrap();
        let orig = att.to_original(&inner);
        assert_eq!(orig, BBox::new(6, 7, 9, 10).unwrap());
        assert_eq!(att.to_attended(&orig), Some(inner));
        assert_eq!(att.to_attended(&BBox::new(0, 0, 2, 2).unwrap()), None);
    }

    fn arb_image_and_mask() -> impl Strategy<Value = (RasterImage, BinaryMask)> {
        (1u32..12, 1u32..12).prop_flat_map(|(w, h)| {
            let n = (w * h) as usize;
            (
                proptest::collection::vec(any::<u8>(), n * 3),
                proptest::collection::vec(any::<bool>(), n),
            )
                .prop_map(move |(px, bits)| {
                    (
                        RasterImage::new(w, h, px).unwrap(),
                        BinaryMask::new(w, h, bits).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn mask_partition_and_idempotence((img, mask) in arb_image_and_mask(), fill in any::<[u8; 3]>()) {
            let fill = Rgb(fill);
            let once = apply_mask(&img, &mask, fill).unwrap();
            let expected = mask_oracle(&img, &mask, fill);
            prop_assert_eq!(once.pixels(), expected.as_slice());
            prop_assert_eq!(apply_mask(&once, &mask, fill).unwrap(), once);
        }

        #[test]
        fn crop_composes((w, h) in (4u32..20, 4u32..20), seed in any::<u64>()) {
            let img = RasterImage::from_fn(w, h, |x, y| Rgb([x as u8, y as u8, (seed % 251) as u8])).unwrap();
            let (x0, y0) = ((seed % 3) as i64, ((seed / 3) % 3) as i64);
            let b1 = BBox::new(x0, y0, w as i64, h as i64).unwrap();
            let outer = crop(&img, &b1).unwrap();
            let b2 = BBox::new(1, 1, outer.width() as i64, outer.height() as i64).unwrap();
            let direct = crop(&img, &b2.translate(x0, y0).unwrap()).unwrap();
            prop_assert_eq!(crop(&outer, &b2).unwrap(), direct);
        }

        #[test]
        fn crop_equals_segment_with_full_mask((img, _) in arb_image_and_mask(), seed in any::<u32>()) {
            let (w, h) = (img.width(), img.height());
            let x0 = seed % w;
            let y0 = (seed / 7) % h;
            let bbox = BBox::new(x0 as i64, y0 as i64, w as i64, h as i64).unwrap();
            let ones = BinaryMask::new(w, h, vec![true; (w * h) as usize]).unwrap();
            let a = isolate_region(&img, &bbox, None, IsolationMode::Crop, Rgb::BLACK).unwrap();
            let b = isolate_region(&img, &bbox, Some(&ones), IsolationMode::SegmentMask, Rgb::BLACK).unwrap();
            prop_assert_eq!(a.image, b.image);
        }
    }
}
