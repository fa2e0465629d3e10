//! Connected-component labelling of binary masks.

use serde::{Deserialize, Serialize};

use crate::raster::Mask;

/// Which neighbours of a pixel count as connected to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    /// N, S, E and W neighbours.
    Four,
    /// All eight neighbours.
    #[default]
    Eight,
}

impl Connectivity {
    pub(crate) fn offsets(self) -> &'static [(i32, i32)] {
        const FOUR: [(i32, i32); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
        const EIGHT: [(i32, i32); 8] = [
            (-1, -1),
            (0, -1),
            (1, -1),
            (-1, 0),
            (1, 0),
            (-1, 1),
            (0, 1),
            (1, 1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

impl std::str::FromStr for Connectivity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "4" | "four" => Ok(Connectivity::Four),
            "8" | "eight" => Ok(Connectivity::Eight),
            _ => Err(format!("unknown connectivity {s:?} (expected four or eight)")),
        }
    }
}

/// Per-pixel component ids: 0 is background, foreground ids are `1..=N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.labels[(y * self.width + x) as usize]
    }

    /// Mask of the pixels whose id satisfies `keep`.
    pub fn select(&self, mut keep: impl FnMut(u32) -> bool) -> Mask {
        let data = self
            .labels
            .iter()
            .map(|&id| (id != 0 && keep(id)) as u8)
            .collect();
        Mask::from_raw(self.width, self.height, data)
    }
}

/// Geometry of one component: pixel count and tight bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub id: u32,
    pub area: u64,
    pub bbox_x: u32,
    pub bbox_y: u32,
    pub bbox_w: u32,
    pub bbox_h: u32,
}

/// Label the foreground of `mask`.
///
/// Ids follow raster-scan order of each component's first pixel, so the
/// labelling is fully determined by the mask and the connectivity. The
/// returned stats are sorted by id.
pub fn label_components(mask: &Mask, connectivity: Connectivity) -> (LabelMap, Vec<ComponentStats>) {
    let (w, h) = (mask.width() as i32, mask.height() as i32);
    let src = mask.data();
    let mut labels = vec![0u32; src.len()];
    let mut stats = Vec::new();
    let mut stack: Vec<u32> = Vec::new();
    let offsets = connectivity.offsets();

    for start in 0..src.len() {
        if src[start] == 0 || labels[start] != 0 {
            continue;
        }
        let id = stats.len() as u32 + 1;
        let (sx, sy) = ((start as i32 % w) as u32, (start as i32 / w) as u32);
        let (mut x0, mut y0, mut x1, mut y1) = (sx, sy, sx, sy);
        let mut area = 0u64;
        labels[start] = id;
        stack.push(start as u32);
        while let Some(idx) = stack.pop() {
            let (x, y) = (idx as i32 % w, idx as i32 / w);
            area += 1;
            x0 = x0.min(x as u32);
            x1 = x1.max(x as u32);
            y0 = y0.min(y as u32);
            y1 = y1.max(y as u32);
            for &(dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let n = (ny * w + nx) as usize;
                if src[n] != 0 && labels[n] == 0 {
                    labels[n] = id;
                    stack.push(n as u32);
                }
            }
        }
        stats.push(ComponentStats {
            id,
            area,
            bbox_x: x0,
            bbox_y: y0,
            bbox_w: x1 - x0 + 1,
            bbox_h: y1 - y0 + 1,
        });
    }

    (
        LabelMap {
            width: mask.width(),
            height: mask.height(),
            labels,
        },
        stats,
    )
}
