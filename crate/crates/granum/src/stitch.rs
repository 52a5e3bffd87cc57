//! Block stitching: seam jobs between adjacent blocks, sequential N-block
//! assembly along any axis, and the direct-averaging baseline.
//!
//! Adjacent blocks overlap by O voxels along the stitch axis; the overlap is
//! regenerated by inpainting with C slices of kept context on each side, so
//! a row of N D-deep blocks stitches to N·(D-O)+O voxels.

use crate::error::{Error, Result};
use crate::sampling::{inpaint, InpaintTask, NoisePredictor, SamplerConfig};
use crate::sched::{NoiseSchedule, StepPlan};
use crate::voxel::{MaskGrid, ValueKind, VoxelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Z = 0,
    Y = 1,
    X = 2,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Geometry of one seam job window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeamSpec {
    pub axis: Axis,
    /// Block depth D along the axis.
    pub block_depth: usize,
    /// Regenerated slices O.
    pub overlap: usize,
    /// Known context slices kept on each side inside the window.
    pub context: usize,
}

impl SeamSpec {
    pub fn window_depth(&self) -> usize {
        self.overlap + 2 * self.context
    }

    fn validate(&self) -> Result<()> {
        if self.overlap == 0 || self.overlap >= self.block_depth {
            return Err(Error::invalid("overlap must satisfy 0 < O < block depth"));
        }
        if self.context == 0 {
            return Err(Error::invalid("context must be ≥ 1"));
        }
        if self.overlap + self.context > self.block_depth {
            return Err(Error::invalid(
                "context + overlap must not exceed the block depth",
            ));
        }
        Ok(())
    }
}

/// Copy `count` slices starting at `src_lo` along `axis` into `dst` at
/// `dst_lo`. Off-axis dims of the two grids must agree.
fn copy_slices(
    src: &VoxelGrid,
    src_lo: usize,
    dst: &mut VoxelGrid,
    dst_lo: usize,
    count: usize,
    axis: Axis,
) {
    let a = axis.index();
    let sd = src.dims;
    let dd = dst.dims;
    for s in 0..count {
        let mut si = [0usize; 3];
        let mut di = [0usize; 3];
        si[a] = src_lo + s;
        di[a] = dst_lo + s;
        let (o1, o2) = ((a + 1) % 3, (a + 2) % 3);
        for i in 0..sd[o1] {
            si[o1] = i;
            di[o1] = i;
            for j in 0..sd[o2] {
                si[o2] = j;
                di[o2] = j;
                let sv = (si[0] * sd[1] + si[1]) * sd[2] + si[2];
                let dv = (di[0] * dd[1] + di[1]) * dd[2] + di[2];
                dst.data[dv] = src.data[sv];
            }
        }
    }
}

fn check_blocks(blocks: &[&VoxelGrid], axis: Axis) -> Result<([usize; 3], usize)> {
    let first = blocks[0];
    let a = axis.index();
    for b in blocks {
        if b.kind != ValueKind::Binary {
            return Err(Error::UnsupportedValueKind {
                expected: "binary",
                found: b.kind.name(),
            });
        }
        if b.dims != first.dims {
            return Err(Error::invalid(format!(
                "blocks must be congruent: {:?} vs {:?}",
                b.dims, first.dims
            )));
        }
    }
    Ok((first.dims, first.dims[a]))
}

/// Build the inpainting task for the seam between adjacent blocks A and B:
/// window = [last C kept slices of A | O empty slices | first C kept slices
/// of B], mask = 1 on the middle O slices.
pub fn build_seam_job(
    block_a: &VoxelGrid,
    block_b: &VoxelGrid,
    spec: &SeamSpec,
    plan: &StepPlan,
    seed: u64,
) -> Result<InpaintTask> {
    spec.validate()?;
    let (dims, depth) = check_blocks(&[block_a, block_b], spec.axis)?;
    if depth != spec.block_depth {
        return Err(Error::invalid(format!(
            "blocks are {depth} deep along the axis, spec says {}",
            spec.block_depth
        )));
    }
    let a = spec.axis.index();
    let (c, o) = (spec.context, spec.overlap);
    let mut wdims = dims;
    wdims[a] = spec.window_depth();
    // Known context on the ±1 signal scale; the masked core stays 0.
    let mut known = VoxelGrid {
        dims: wdims,
        data: vec![0.0; wdims[0] * wdims[1] * wdims[2]],
        pitch: block_a.pitch,
        origin: block_a.origin,
        kind: ValueKind::Signal,
    };
    let sig_a = block_a.to_signal()?;
    let sig_b = block_b.to_signal()?;
    // A keeps [0, D-O); its last C kept slices are [D-O-C, D-O).
    copy_slices(&sig_a, depth - o - c, &mut known, 0, c, spec.axis);
    // B keeps [O, D); its first C kept slices are [O, O+C).
    copy_slices(&sig_b, o, &mut known, c + o, c, spec.axis);
    let mut mask = MaskGrid::zeros(wdims);
    let (o1, o2) = ((a + 1) % 3, (a + 2) % 3);
    for s in c..c + o {
        let mut idx = [0usize; 3];
        idx[a] = s;
        for i in 0..wdims[o1] {
            idx[o1] = i;
            for j in 0..wdims[o2] {
                idx[o2] = j;
                let v = (idx[0] * wdims[1] + idx[1]) * wdims[2] + idx[2];
                mask.data[v] = 1;
            }
        }
    }
    Ok(InpaintTask {
        known,
        mask,
        plan: plan.clone(),
        seed,
    })
}

/// Output length along the stitch axis: N·(D-O)+O.
pub fn stitched_length(n_blocks: usize, block_depth: usize, overlap: usize) -> usize {
    n_blocks * (block_depth - overlap) + overlap
}

/// Stitch N blocks left to right; each seam's left context comes from the
/// already-stitched result. Non-seam voxels are copied bit-exactly.
pub fn stitch_sequence(
    blocks: &[VoxelGrid],
    spec: &SeamSpec,
    net: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    plan: &StepPlan,
    seed: u64,
    cfg: SamplerConfig,
) -> Result<VoxelGrid> {
    spec.validate()?;
    if blocks.len() < 2 {
        return Err(Error::invalid("stitching needs at least 2 blocks"));
    }
    let refs: Vec<&VoxelGrid> = blocks.iter().collect();
    let (dims, depth) = check_blocks(&refs, spec.axis)?;
    if depth != spec.block_depth {
        return Err(Error::invalid(format!(
            "blocks are {depth} deep along the axis, spec says {}",
            spec.block_depth
        )));
    }
    let a = spec.axis.index();
    let (c, o) = (spec.context, spec.overlap);
    let mut out_dims = dims;
    out_dims[a] = stitched_length(blocks.len(), depth, o);
    let mut out = VoxelGrid {
        dims: out_dims,
        data: vec![0.0; out_dims[0] * out_dims[1] * out_dims[2]],
        pitch: blocks[0].pitch,
        origin: blocks[0].origin,
        kind: ValueKind::Binary,
    };
    copy_slices(&blocks[0], 0, &mut out, 0, depth, spec.axis);
    for (i, block) in blocks.iter().enumerate().skip(1) {
        let offset = i * (depth - o);
        // Paste the kept part of the incoming block.
        copy_slices(block, o, &mut out, offset + o, depth - o, spec.axis);
        // Seam window context comes from the stitched result itself.
        let task = seam_task_from(&out, offset, spec, plan, crate::sampling::sample_seed(seed, i))?;
        let filled = inpaint(net, sched, &task, cfg)
            .map_err(|e| Error::invalid(format!("seam {i}: {e}")))?;
        copy_slices(&filled, c, &mut out, offset, o, spec.axis);
    }
    Ok(out)
}

/// Seam task whose context is read from the working result at `offset`
/// (the first regenerated slice along the axis).
fn seam_task_from(
    result: &VoxelGrid,
    offset: usize,
    spec: &SeamSpec,
    plan: &StepPlan,
    seed: u64,
) -> Result<InpaintTask> {
    let a = spec.axis.index();
    let (c, o) = (spec.context, spec.overlap);
    let mut wdims = result.dims;
    wdims[a] = spec.window_depth();
    let mut known = VoxelGrid {
        dims: wdims,
        data: vec![0.0; wdims[0] * wdims[1] * wdims[2]],
        pitch: result.pitch,
        origin: result.origin,
        kind: ValueKind::Binary,
    };
    copy_slices(result, offset - c, &mut known, 0, c, spec.axis);
    copy_slices(result, offset + o, &mut known, c + o, c, spec.axis);
    let known = known.to_signal()?;
    let mut mask = MaskGrid::zeros(wdims);
    let (o1, o2) = ((a + 1) % 3, (a + 2) % 3);
    for s in c..c + o {
        let mut idx = [0usize; 3];
        idx[a] = s;
        for p in 0..wdims[o1] {
            idx[o1] = p;
            for q in 0..wdims[o2] {
                idx[o2] = q;
                mask.data[(idx[0] * wdims[1] + idx[1]) * wdims[2] + idx[2]] = 1;
            }
        }
    }
    Ok(InpaintTask {
        known,
        mask,
        plan: plan.clone(),
        seed,
    })
}

/// Alternative ordering: odd-indexed seams first against the pasted block
/// layout, then even-indexed seams against the updated result. Seams within
/// a wave read a common snapshot and may run in parallel; results differ
/// from the sequential reference mode and carry no cross-seam ordering.
pub fn stitch_waves(
    blocks: &[VoxelGrid],
    spec: &SeamSpec,
    net: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    plan: &StepPlan,
    seed: u64,
    cfg: SamplerConfig,
) -> Result<VoxelGrid> {
    use rayon::prelude::*;
    spec.validate()?;
    if blocks.len() < 2 {
        return Err(Error::invalid("stitching needs at least 2 blocks"));
    }
    let refs: Vec<&VoxelGrid> = blocks.iter().collect();
    let (dims, depth) = check_blocks(&refs, spec.axis)?;
    if depth != spec.block_depth {
        return Err(Error::invalid(format!(
            "blocks are {depth} deep along the axis, spec says {}",
            spec.block_depth
        )));
    }
    let a = spec.axis.index();
    let (c, o) = (spec.context, spec.overlap);
    let mut out_dims = dims;
    out_dims[a] = stitched_length(blocks.len(), depth, o);
    let mut out = VoxelGrid {
        dims: out_dims,
        data: vec![0.0; out_dims[0] * out_dims[1] * out_dims[2]],
        pitch: blocks[0].pitch,
        origin: blocks[0].origin,
        kind: ValueKind::Binary,
    };
    copy_slices(&blocks[0], 0, &mut out, 0, depth, spec.axis);
    for (i, block) in blocks.iter().enumerate().skip(1) {
        copy_slices(block, o, &mut out, i * (depth - o) + o, depth - o, spec.axis);
    }
    for parity in [1usize, 0] {
        let seams: Vec<usize> = (1..blocks.len()).filter(|i| i % 2 == parity).collect();
        // Tasks read one snapshot; fills write disjoint zones afterwards.
        let tasks: Vec<InpaintTask> = seams
            .iter()
            .map(|&i| {
                seam_task_from(
                    &out,
                    i * (depth - o),
                    spec,
                    plan,
                    crate::sampling::sample_seed(seed, i),
                )
            })
            .collect::<Result<_>>()?;
        let fills: Vec<Result<VoxelGrid>> = tasks
            .par_iter()
            .map(|task| inpaint(net, sched, task, cfg))
            .collect();
        for (&i, fill) in seams.iter().zip(fills) {
            let filled = fill.map_err(|e| Error::invalid(format!("seam {i}: {e}")))?;
            copy_slices(&filled, c, &mut out, i * (depth - o), o, spec.axis);
        }
    }
    Ok(out)
}

/// Direct-averaging baseline: overlapping slices are replaced by the mean of
/// the two neighbors on the ±1 signal scale, then binarized at 0 (an exact
/// tie averages to 0 and binarizes to 0).
pub fn blend_average(blocks: &[VoxelGrid], spec: &SeamSpec) -> Result<VoxelGrid> {
    spec.validate()?;
    if blocks.len() < 2 {
        return Err(Error::invalid("blending needs at least 2 blocks"));
    }
    let refs: Vec<&VoxelGrid> = blocks.iter().collect();
    let (dims, depth) = check_blocks(&refs, spec.axis)?;
    let a = spec.axis.index();
    let o = spec.overlap;
    let mut out_dims = dims;
    out_dims[a] = stitched_length(blocks.len(), depth, o);
    let n_out = out_dims[0] * out_dims[1] * out_dims[2];
    let mut sum = vec![0.0f64; n_out];
    let mut count = vec![0u8; n_out];
    let (o1, o2) = ((a + 1) % 3, (a + 2) % 3);
    for (i, block) in blocks.iter().enumerate() {
        let offset = i * (depth - o);
        let sig = block.to_signal()?;
        for s in 0..depth {
            let mut bi = [0usize; 3];
            let mut oi = [0usize; 3];
            bi[a] = s;
            oi[a] = offset + s;
            for p in 0..dims[o1] {
                bi[o1] = p;
                oi[o1] = p;
                for q in 0..dims[o2] {
                    bi[o2] = q;
                    oi[o2] = q;
                    let src = (bi[0] * dims[1] + bi[1]) * dims[2] + bi[2];
                    let dst = (oi[0] * out_dims[1] + oi[1]) * out_dims[2] + oi[2];
                    sum[dst] += sig.data[src];
                    count[dst] += 1;
                }
            }
        }
    }
    let data = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if s / c as f64 > 0.0 { 1.0 } else { 0.0 })
        .collect();
    VoxelGrid::new(
        out_dims,
        data,
        blocks[0].pitch,
        blocks[0].origin,
        ValueKind::Binary,
    )
}

/// Multi-axis stitching composed axis by axis: x rows first, then y columns
/// of row strips, then z. `blocks` are indexed row-major (z, y, x).
pub fn stitch_lattice(
    blocks: &[VoxelGrid],
    counts: [usize; 3],
    overlap: usize,
    context: usize,
    net: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    plan: &StepPlan,
    seed: u64,
    cfg: SamplerConfig,
) -> Result<VoxelGrid> {
    if counts.iter().product::<usize>() != blocks.len() {
        return Err(Error::invalid("block count does not match lattice counts"));
    }
    if blocks.is_empty() {
        return Err(Error::invalid("empty lattice"));
    }
    let mut pieces: Vec<VoxelGrid> = blocks.to_vec();
    let mut seed_stream = 0usize;
    for axis in [Axis::X, Axis::Y, Axis::Z] {
        let a = axis.index();
        if counts[a] == 1 {
            continue;
        }
        let groups = pieces.len() / counts[a];
        let mut next = Vec::with_capacity(groups);
        for g in 0..groups {
            let row = &pieces[g * counts[a]..(g + 1) * counts[a]];
            let spec = SeamSpec {
                axis,
                block_depth: row[0].dims[a],
                overlap,
                context,
            };
            seed_stream += 1;
            next.push(stitch_sequence(
                row,
                &spec,
                net,
                sched,
                plan,
                crate::sampling::sample_seed(seed, seed_stream),
                cfg,
            )?);
        }
        pieces = next;
    }
    Ok(pieces.into_iter().next().unwrap())
}
