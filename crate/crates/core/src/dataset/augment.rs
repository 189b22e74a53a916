//! Lattice symmetries acting on training samples.

use serde::{Deserialize, Serialize};

use crate::dataset::{MapKind, TrainingSample};
use crate::error::{Error, Result};
use crate::lattice::LatticeGeometry;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum SymmetryOp {
    /// `x -> x + shift` (periodic).
    Translate { shift: Vec<isize> },
    /// `x_axis -> -x_axis`.
    Reflect { axis: usize },
    /// Counter-clockwise quarter turns `(x0, x1) -> (-x1, x0)`; square 2D
    /// lattices only.
    Rotate { quarter_turns: u8 },
}

impl SymmetryOp {
    pub fn inverse(&self) -> SymmetryOp {
        match self {
            SymmetryOp::Translate { shift } => SymmetryOp::Translate {
                shift: shift.iter().map(|s| -s).collect(),
            },
            SymmetryOp::Reflect { axis } => SymmetryOp::Reflect { axis: *axis },
            SymmetryOp::Rotate { quarter_turns } => SymmetryOp::Rotate {
                quarter_turns: (4 - quarter_turns % 4) % 4,
            },
        }
    }

    /// Every reflection and, for square 2D lattices, rotation, followed by
    /// no translation. Used to enumerate the point group.
    pub fn point_group(geom: &LatticeGeometry) -> Vec<Vec<SymmetryOp>> {
        let mut out = vec![vec![], vec![SymmetryOp::Reflect { axis: 0 }]];
        if geom.dim() == 2 {
            out.push(vec![SymmetryOp::Reflect { axis: 1 }]);
            out.push(vec![SymmetryOp::Reflect { axis: 0 }, SymmetryOp::Reflect { axis: 1 }]);
            if geom.is_square() {
                for r in [1, 3] {
                    out.push(vec![SymmetryOp::Rotate { quarter_turns: r }]);
                }
                for a in 0..2 {
                    out.push(vec![
                        SymmetryOp::Rotate { quarter_turns: 1 },
                        SymmetryOp::Reflect { axis: a },
                    ]);
                }
            }
        }
        out
    }
}

/// `y[dest[a]] = sign[a]·x[a] + offset[dest[a]]`, periodic.
struct Affine {
    dest: Vec<usize>,
    sign: Vec<isize>,
    offset: Vec<isize>,
}

impl Affine {
    fn from_op(op: &SymmetryOp, geom: &LatticeGeometry) -> Result<Affine> {
        let d = geom.dim();
        let mut t = Affine {
            dest: (0..d).collect(),
            sign: vec![1; d],
            offset: vec![0; d],
        };
        match op {
            SymmetryOp::Translate { shift } => {
                if shift.len() != d {
                    return Err(Error::ShapeMismatch(format!(
                        "translation {shift:?} on a {d}-dimensional lattice"
                    )));
                }
                t.offset = shift.clone();
            }
            SymmetryOp::Reflect { axis } => {
                if *axis >= d {
                    return Err(Error::InvalidGeometry(format!("no axis {axis} in {d} dimensions")));
                }
                t.sign[*axis] = -1;
            }
            SymmetryOp::Rotate { quarter_turns } => {
                if d != 2 || !geom.is_square() {
                    return Err(Error::NonSquare(geom.extents().to_vec()));
                }
                for _ in 0..quarter_turns % 4 {
                    // Compose with (x0, x1) -> (-x1, x0).
                    let mut next = Affine {
                        dest: vec![0; 2],
                        sign: vec![0; 2],
                        offset: vec![-t.offset[1], t.offset[0]],
                    };
                    for a in 0..2 {
                        let (b, s) = if t.dest[a] == 0 { (1, 1) } else { (0, -1) };
                        next.dest[a] = b;
                        next.sign[a] = s * t.sign[a];
                    }
                    t = next;
                }
            }
        }
        Ok(t)
    }

    fn out_extents(&self, ext: &[usize]) -> Vec<usize> {
        let mut out = vec![0; ext.len()];
        for (a, &b) in self.dest.iter().enumerate() {
            out[b] = ext[a];
        }
        out
    }

    fn map_site(&self, src: &LatticeGeometry, dst: &LatticeGeometry, site: usize) -> usize {
        let x = src.coords(site);
        let mut y = vec![0usize; x.len()];
        for a in 0..x.len() {
            let b = self.dest[a];
            let l = dst.extents()[b] as isize;
            y[b] = (self.sign[a] * x[a] as isize + self.offset[b]).rem_euclid(l) as usize;
        }
        dst.site(&y)
    }
}

/// Applies `t` to one map of the given kind. Direction-resolved maps have
/// one leading channel per axis.
fn transform_map(
    t: &Affine,
    src: &LatticeGeometry,
    dst: &LatticeGeometry,
    kind: MapKind,
    data: &[f64],
) -> Vec<f64> {
    let n = src.site_count();
    let mut out = vec![0.0; data.len()];
    if kind == MapKind::Site {
        for x in 0..n {
            out[t.map_site(src, dst, x)] = data[x];
        }
        return out;
    }
    for a in 0..src.dim() {
        let b = t.dest[a];
        let flipped = t.sign[a] < 0;
        for x in 0..n {
            let y = t.map_site(src, dst, x);
            let v = data[a * n + x];
            let (site, value) = match (kind, flipped) {
                (MapKind::Bond, true) => (dst.shift(y, b, -1), v),
                (MapKind::Current, true) => (dst.shift(y, b, 1), -v),
                _ => (y, v),
            };
            out[b * n + site] = value;
        }
    }
    out
}

fn transform_tensor(
    t: &Affine,
    src: &LatticeGeometry,
    dst: &LatticeGeometry,
    layout: &[(MapKind, usize)],
    tensor: &Tensor,
) -> Result<Tensor> {
    let n = src.site_count();
    let mut data = Vec::with_capacity(tensor.len());
    let mut offset = 0;
    for &(kind, channels) in layout {
        let block = &tensor.data()[offset * n..(offset + channels) * n];
        data.extend(transform_map(t, src, dst, kind, block));
        offset += channels;
    }
    let mut dims = vec![tensor.dims()[0]];
    dims.extend(dst.extents());
    Tensor::new(dims, data)
}

/// Transforms every input channel, target map and the stored potential of
/// `sample` consistently.
pub fn augment(sample: &TrainingSample, op: &SymmetryOp) -> Result<TrainingSample> {
    let src = sample.geometry()?;
    let t = Affine::from_op(op, &src)?;
    let dst = LatticeGeometry::new(src.dim(), &t.out_extents(src.extents()))?;
    let task = sample.meta.task;
    let inputs_layout: Vec<(MapKind, usize)> = task
        .input_channels()
        .iter()
        .map(|_| (MapKind::Site, 1))
        .collect();
    let target_layout: Vec<(MapKind, usize)> = task.heads().iter().map(|h| (h.kind, h.channels)).collect();
    let mut meta = sample.meta.clone();
    meta.extents = dst.extents().to_vec();
    meta.potential = transform_map(&t, &src, &dst, MapKind::Site, &sample.meta.potential);
    Ok(TrainingSample {
        meta,
        inputs: transform_tensor(&t, &src, &dst, &inputs_layout, &sample.inputs)?,
        targets: transform_tensor(&t, &src, &dst, &target_layout, &sample.targets)?,
    })
}

/// Applies a sequence of operations left to right.
pub fn augment_all(sample: &TrainingSample, ops: &[SymmetryOp]) -> Result<TrainingSample> {
    let mut s = sample.clone();
    for op in ops {
        s = augment(&s, op)?;
    }
    Ok(s)
}
