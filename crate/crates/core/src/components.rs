//! Connected-component labeling on 3-D and 2-D grids.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

/// Neighbourhood used for 3-D labeling. The 2-D analogue of `Face` is
/// 4-connectivity and of `Full` is 8-connectivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    /// 6 neighbours in 3-D.
    Face,
    /// 18 neighbours in 3-D.
    Edge,
    /// 26 neighbours in 3-D.
    #[default]
    Full,
}

impl Connectivity {
    fn offsets3(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let manhattan = dz.abs() + dy.abs() + dx.abs();
                    let keep = match self {
                        Connectivity::Face => manhattan == 1,
                        Connectivity::Edge => (1..=2).contains(&manhattan),
                        Connectivity::Full => manhattan >= 1,
                    };
                    if keep {
                        out.push([dz, dy, dx]);
                    }
                }
            }
        }
        out
    }
}

/// Result of labeling: `labels` holds 0 for background and `1..=count`
/// for components, numbered in raster order of their first voxel.
#[derive(Debug, Clone)]
pub struct Labeling {
    pub labels: Array3<u32>,
    pub sizes: Vec<usize>,
}

impl Labeling {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Voxel indices `[z, y, x]` of each component, in raster order.
    pub fn voxel_lists(&self) -> Vec<Vec<[usize; 3]>> {
        let mut out: Vec<Vec<[usize; 3]>> = self.sizes.iter().map(|&n| Vec::with_capacity(n)).collect();
        for ((z, y, x), &l) in self.labels.indexed_iter() {
            if l > 0 {
                out[l as usize - 1].push([z, y, x]);
            }
        }
        out
    }
}

/// Labels connected regions of voxels for which `same(a, b)` holds between
/// neighbours and `foreground(v)` holds for each member.
pub fn label_by<T>(
    grid: &Array3<T>,
    connectivity: Connectivity,
    foreground: impl Fn(&T) -> bool,
    same: impl Fn(&T, &T) -> bool,
) -> Labeling {
    let (nz, ny, nx) = grid.dim();
    let offsets = connectivity.offsets3();
    let mut labels = Array3::<u32>::zeros((nz, ny, nx));
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if labels[[z, y, x]] != 0 || !foreground(&grid[[z, y, x]]) {
                    continue;
                }
                let id = sizes.len() as u32 + 1;
                let mut size = 0usize;
                labels[[z, y, x]] = id;
                stack.push([z, y, x]);
                while let Some([cz, cy, cx]) = stack.pop() {
                    size += 1;
                    let here = &grid[[cz, cy, cx]];
                    for o in &offsets {
                        let (qz, qy, qx) = (cz as isize + o[0], cy as isize + o[1], cx as isize + o[2]);
                        if qz < 0 || qy < 0 || qx < 0 || qz >= nz as isize || qy >= ny as isize || qx >= nx as isize {
                            continue;
                        }
                        let q = [qz as usize, qy as usize, qx as usize];
                        if labels[q] == 0 && foreground(&grid[q]) && same(here, &grid[q]) {
                            labels[q] = id;
                            stack.push(q);
                        }
                    }
                }
                sizes.push(size);
            }
        }
    }
    Labeling { labels, sizes }
}

/// Labels the `true` voxels of a binary grid.
pub fn label_binary(mask: &Array3<bool>, connectivity: Connectivity) -> Labeling {
    label_by(mask, connectivity, |&v| v, |_, _| true)
}

/// 2-D labeling; `Face` gives 4-connectivity, anything else 8-connectivity.
pub fn label_binary_2d(mask: &Array2<bool>, connectivity: Connectivity) -> (Array2<u32>, Vec<usize>) {
    let (h, w) = mask.dim();
    let grid = mask.view().into_shape_with_order((1, h, w)).expect("2-D view").to_owned();
    let conn = match connectivity {
        Connectivity::Face => Connectivity::Face,
        _ => Connectivity::Full,
    };
    let lab = label_binary(&grid, conn);
    let labels = lab.labels.into_shape_with_order((h, w)).expect("same size");
    (labels, lab.sizes)
}
