use crate::error::{Error, Result};
use crate::image::LabelMap;

/// Total mapping from source class ids `[0, len)` onto `[0, classes)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassRemap {
    name: String,
    table: Vec<u8>,
    classes: usize,
}

/// Cityscapes train ids, in order.
const CITYSCAPES_19: [&str; 19] = [
    "road",
    "sidewalk",
    "building",
    "wall",
    "fence",
    "pole",
    "traffic light",
    "traffic sign",
    "vegetation",
    "terrain",
    "sky",
    "person",
    "rider",
    "car",
    "truck",
    "bus",
    "train",
    "motorcycle",
    "bicycle",
];

impl ClassRemap {
    /// Fails unless every output id is below `classes` and every output
    /// class is hit by at least one input id.
    pub fn new(name: impl Into<String>, table: Vec<u8>, classes: usize) -> Result<Self> {
        let mut hit = vec![false; classes];
        for &t in &table {
            match hit.get_mut(t as usize) {
                Some(h) => *h = true,
                None => return Err(Error::validation(format!("remap output {t} is not below {classes}"))),
            }
        }
        if let Some(k) = hit.iter().position(|h| !h) {
            return Err(Error::validation(format!("remap never produces class {k}")));
        }
        Ok(ClassRemap {
            name: name.into(),
            table,
            classes,
        })
    }

    pub fn identity(classes: usize) -> Self {
        ClassRemap::new("identity", (0..classes as u8).collect(), classes).expect("identity is surjective")
    }

    /// Cityscapes 19 train ids onto the 11 DSEC-Semantic classes:
    /// background, building, fence, person, pole, road, sidewalk,
    /// vegetation, car, wall, traffic sign (ids 0 to 10 in this order).
    pub fn dsec_11() -> Self {
        // road sidewalk building wall fence pole light sign veg terrain sky
        // person rider car truck bus train motorcycle bicycle
        let table = vec![5, 6, 1, 9, 2, 4, 10, 10, 7, 7, 0, 3, 3, 8, 8, 8, 8, 8, 8];
        ClassRemap::new("dsec-11", table, 11).expect("table is valid")
    }

    /// Cityscapes 19 train ids onto the six DDD17 classes: flat, background,
    /// object, vegetation, human, vehicle (ids 0 to 5 in this order).
    ///
    /// The per-id assignment is an assumption: flat = road, sidewalk;
    /// background = building, wall, fence, sky; object = pole, traffic light,
    /// traffic sign; vegetation = vegetation, terrain; human = person, rider;
    /// vehicle = car, truck, bus, train, motorcycle, bicycle.
    pub fn ddd17_6() -> Self {
        let table = vec![0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 1, 4, 4, 5, 5, 5, 5, 5, 5];
        ClassRemap::new("ddd17-6", table, 6).expect("table is valid")
    }

    pub fn source_class_names() -> &'static [&'static str; 19] {
        &CITYSCAPES_19
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn domain_len(&self) -> usize {
        self.table.len()
    }

    pub fn map(&self, id: u8) -> Option<u8> {
        self.table.get(id as usize).copied()
    }
}

pub fn remap_labels(labels: &LabelMap, remap: &ClassRemap) -> Result<LabelMap> {
    let data = labels
        .data
        .iter()
        .map(|&l| {
            remap
                .map(l)
                .ok_or_else(|| Error::validation(format!("class id {l} is not mapped by {}", remap.name)))
        })
        .collect::<Result<_>>()?;
    LabelMap::new(labels.height, labels.width, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_unchanged() {
        let l = LabelMap::new(2, 2, vec![0, 3, 2, 1]).unwrap();
        assert_eq!(remap_labels(&l, &ClassRemap::identity(4)).unwrap(), l);
    }

    #[test]
    fn builtin_tables_cover_their_ranges() {
        for (r, c) in [(ClassRemap::dsec_11(), 11), (ClassRemap::ddd17_6(), 6)] {
            assert_eq!(r.classes(), c);
            assert_eq!(r.domain_len(), 19);
            let all = LabelMap::new(1, 19, (0..19).collect()).unwrap();
            let out = remap_labels(&all, &r).unwrap();
            assert!(out.data.iter().all(|&v| (v as usize) < c));
            assert_eq!(out.histogram(c).iter().filter(|&&n| n > 0).count(), c);
        }
        let d = ClassRemap::dsec_11();
        assert_eq!(d.map(0), Some(5));
        assert_eq!(d.map(13), Some(8));
        assert_eq!(ClassRemap::ddd17_6().map(10), Some(1));
    }

    #[test]
    fn unmapped_ids_are_rejected() {
        let l = LabelMap::new(1, 1, vec![19]).unwrap();
        assert!(remap_labels(&l, &ClassRemap::dsec_11()).is_err());
        assert!(ClassRemap::new("bad", vec![0, 2], 2).is_err());
        assert!(ClassRemap::new("gap", vec![0, 0], 2).is_err());
    }
}
