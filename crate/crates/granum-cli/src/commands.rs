//! Subcommand implementations. Every command is a pure function of
//! (resolved config, seed, input files) and echoes the resolved config it
//! ran with, both to stdout and as a sidecar next to its outputs.

use std::path::{Path, PathBuf};

use granum::archive::{encode_entry, write_archive, ArchiveEntry, ArchiveReader, Metadata};
use granum::error::{Error, Result};
use granum::geom::{Box3, Vec3};
use granum::mesh::MeshFormat;
use granum::nn::{load_checkpoint, save_checkpoint, train, DenoiserNet, TrainMode};
use granum::sampling::sample_unconditional;
use granum::sched::{NoiseSchedule, StepPlan};
use granum::segment::{
    distance_map, export_grains, find_markers, refine_grains, watershed, ExportFormat, GrainSet,
    LabelGrid,
};
use granum::stats::{contact_graph, per_grain_csv, report};
use granum::stitch::{stitch_sequence, SeamSpec};
use granum::synth::make_dataset;
use granum::voxel::VoxelGrid;
use granum::UNetConfig;

use crate::config::RunConfig;

fn echo_config(cfg: &RunConfig, sidecar: &Path) -> Result<()> {
    let json = cfg.to_json();
    println!("{json}");
    if let Some(dir) = sidecar.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(sidecar, json.as_bytes())?;
    Ok(())
}

fn sidecar_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    out.with_file_name(name)
}

fn schedule(cfg: &RunConfig) -> Result<NoiseSchedule> {
    NoiseSchedule::new(cfg.schedule.t, cfg.schedule.kind.into())
}

fn plan(cfg: &RunConfig) -> Result<StepPlan> {
    StepPlan::evenly_spaced(cfg.schedule.t, cfg.sampler.steps, cfg.sampler.eta)
}

pub fn run_synth(cfg: &RunConfig, out: &Path, count: usize) -> Result<()> {
    echo_config(cfg, &sidecar_for(out))?;
    let entries = make_dataset(&cfg.scene, count, cfg.block_dims)?;
    write_archive(out, &entries)?;
    eprintln!(
        "synth: {count} scenes -> {} blocks -> {}",
        entries.len(),
        out.display()
    );
    Ok(())
}

pub fn run_voxelize(
    cfg: &RunConfig,
    mesh_path: &Path,
    format: Option<MeshFormat>,
    out: &Path,
    bounds: Option<[f64; 6]>,
    split: bool,
) -> Result<()> {
    echo_config(cfg, &sidecar_for(out))?;
    let format = format.unwrap_or_else(|| {
        match mesh_path.extension().and_then(|e| e.to_str()) {
            Some("vtu") | Some("xml") => MeshFormat::GridXmlSubset,
            _ => MeshFormat::TriList,
        }
    });
    let bytes = std::fs::read(mesh_path)?;
    let mesh = granum::mesh::parse_mesh(&bytes, format)?;
    let b = match bounds {
        Some(v) => Box3::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5])),
        None => mesh
            .bounding_box()
            .ok_or_else(|| Error::invalid("mesh has no vertices"))?,
    };
    let grid = granum::voxelize::voxelize(&mesh, cfg.scene.pitch, b)?;
    let mut meta = Metadata::new();
    meta.insert("source".into(), mesh_path.display().to_string());
    meta.insert(
        "phi".into(),
        format!("{:.6}", grid.foreground_count() as f64 / grid.len() as f64),
    );
    let entries: Vec<ArchiveEntry> = if split {
        grid.extract_blocks(cfg.block_dims)?
            .iter()
            .enumerate()
            .map(|(i, blk)| {
                let mut m = meta.clone();
                m.insert(
                    "phi".into(),
                    format!("{:.6}", blk.foreground_count() as f64 / blk.len() as f64),
                );
                encode_entry(blk, &format!("block{i:04}"), m)
            })
            .collect::<Result<_>>()?
    } else {
        vec![encode_entry(&grid, "mesh", meta)?]
    };
    write_archive(out, &entries)?;
    eprintln!(
        "voxelize: {} -> {:?} voxels -> {}",
        mesh_path.display(),
        grid.dims,
        out.display()
    );
    Ok(())
}

pub fn run_train(
    cfg: &RunConfig,
    data: &Path,
    mode: TrainMode,
    out: &Path,
    loss_csv: Option<&Path>,
) -> Result<()> {
    echo_config(cfg, &sidecar_for(out))?;
    let dataset = ArchiveReader::open(data)?.decode_all()?;
    let net_cfg = UNetConfig {
        in_channels: match mode {
            TrainMode::Unconditional => 1,
            TrainMode::Inpainting => 3,
        },
        ..cfg.net.clone()
    };
    let mut net = DenoiserNet::build(net_cfg, cfg.train.seed)?;
    let sched = schedule(cfg)?;
    let trained = train(&mut net, &dataset, &cfg.train, &sched, mode)?;
    save_checkpoint(out, &net, cfg.train.seed, cfg.train.epochs)?;
    if let Some(csv) = loss_csv {
        let mut text = String::from("step,loss\n");
        for (i, l) in trained.step_losses.iter().enumerate() {
            text.push_str(&format!("{i},{l:.12e}\n"));
        }
        std::fs::write(csv, text)?;
    }
    eprintln!(
        "train: {} grids, {} steps, first epoch loss {:.4}, last {:.4} -> {}",
        dataset.len(),
        trained.steps,
        trained.epoch_losses.first().unwrap_or(&f64::NAN),
        trained.epoch_losses.last().unwrap_or(&f64::NAN),
        out.display()
    );
    Ok(())
}

pub fn run_sample(
    cfg: &RunConfig,
    checkpoint: &Path,
    out: &Path,
    batch: usize,
    dims: Option<[usize; 3]>,
) -> Result<()> {
    echo_config(cfg, &sidecar_for(out))?;
    let (net, _meta) = load_checkpoint(checkpoint)?;
    let sched = schedule(cfg)?;
    let plan = plan(cfg)?;
    let dims = dims.unwrap_or(cfg.block_dims);
    let grids = sample_unconditional(
        &net,
        &sched,
        &plan,
        dims,
        cfg.scene.pitch,
        batch,
        cfg.seed,
        cfg.sampler.sampler(),
    )?;
    let entries: Vec<ArchiveEntry> = grids
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let mut m = Metadata::new();
            m.insert(
                "phi".into(),
                format!("{:.6}", g.foreground_count() as f64 / g.len() as f64),
            );
            m.insert("seed".into(), cfg.seed.to_string());
            encode_entry(g, &format!("sample{i:03}"), m)
        })
        .collect::<Result<_>>()?;
    write_archive(out, &entries)?;
    eprintln!("sample: {batch} grids of {dims:?} -> {}", out.display());
    Ok(())
}

pub fn run_stitch(
    cfg: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    out: &Path,
    n_blocks: Option<usize>,
    depth: Option<usize>,
) -> Result<()> {
    echo_config(cfg, &sidecar_for(out))?;
    let reader = ArchiveReader::open(data)?;
    let mut blocks = reader.decode_all()?;
    if let Some(n) = n_blocks {
        if n > blocks.len() {
            return Err(Error::invalid(format!(
                "asked for {n} blocks, archive holds {}",
                blocks.len()
            )));
        }
        blocks.truncate(n);
    }
    if blocks.len() < 2 {
        return Err(Error::invalid("stitching needs at least 2 blocks"));
    }
    let axis = cfg.seam.axis;
    let block_depth = blocks[0].dims[axis.index()];
    if let Some(d) = depth {
        if d != block_depth {
            return Err(Error::invalid(format!(
                "blocks are {block_depth} deep along {axis:?}, --depth says {d}"
            )));
        }
    }
    let spec = SeamSpec {
        axis,
        block_depth,
        overlap: cfg.seam.overlap,
        context: cfg.seam.context,
    };
    let (net, _meta) = load_checkpoint(checkpoint)?;
    let sched = schedule(cfg)?;
    let plan = plan(cfg)?;
    let stitched = stitch_sequence(
        &blocks,
        &spec,
        &net,
        &sched,
        &plan,
        cfg.seed,
        cfg.sampler.sampler(),
    )?;
    let mut meta = Metadata::new();
    meta.insert("n_blocks".into(), blocks.len().to_string());
    meta.insert("overlap".into(), spec.overlap.to_string());
    meta.insert("context".into(), spec.context.to_string());
    meta.insert("axis".into(), format!("{axis:?}").to_lowercase());
    meta.insert("depth".into(), stitched.dims[axis.index()].to_string());
    meta.insert(
        "phi".into(),
        format!(
            "{:.6}",
            stitched.foreground_count() as f64 / stitched.len() as f64
        ),
    );
    write_archive(out, &[encode_entry(&stitched, "stitched", meta)?])?;
    eprintln!(
        "stitch: {} blocks -> {:?} -> {}",
        blocks.len(),
        stitched.dims,
        out.display()
    );
    Ok(())
}

fn load_grid(data: &Path, id: Option<&str>) -> Result<VoxelGrid> {
    let reader = ArchiveReader::open(data)?;
    let entry = match id {
        Some(id) => reader
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no entry {id:?} in {}", data.display())))?,
        None => reader
            .entries()
            .first()
            .ok_or_else(|| Error::invalid("archive is empty"))?,
    };
    granum::archive::decode_entry(entry)
}

fn write_labels(dir: &Path, labels: &LabelGrid) -> Result<()> {
    let mut bytes = Vec::with_capacity(labels.labels.len() * 4);
    for &l in &labels.labels {
        bytes.extend_from_slice(&l.to_le_bytes());
    }
    std::fs::write(dir.join("labels.bin"), bytes)?;
    let header = serde_json::json!({
        "dims": labels.dims,
        "pitch": labels.pitch,
        "origin": labels.origin,
        "label_count": labels.label_count(),
    });
    std::fs::write(
        dir.join("labels.json"),
        serde_json::to_string_pretty(&header).unwrap(),
    )?;
    Ok(())
}

fn read_labels(dir: &Path) -> Result<LabelGrid> {
    let header: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("labels.json"))?)
            .map_err(|e| Error::CorruptPayload(format!("labels.json: {e}")))?;
    let dims: [usize; 3] = serde_json::from_value(header["dims"].clone())
        .map_err(|e| Error::CorruptPayload(format!("labels.json dims: {e}")))?;
    let pitch = header["pitch"]
        .as_f64()
        .ok_or_else(|| Error::CorruptPayload("labels.json pitch".into()))?;
    let origin: [f64; 3] = serde_json::from_value(header["origin"].clone())
        .map_err(|e| Error::CorruptPayload(format!("labels.json origin: {e}")))?;
    let bytes = std::fs::read(dir.join("labels.bin"))?;
    if bytes.len() != dims[0] * dims[1] * dims[2] * 4 {
        return Err(Error::CorruptPayload("labels.bin length mismatch".into()));
    }
    let labels = bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(LabelGrid {
        dims,
        labels,
        pitch,
        origin,
    })
}

fn segment_grid(cfg: &RunConfig, grid: &VoxelGrid) -> Result<(LabelGrid, GrainSet)> {
    let dist = distance_map(grid)?;
    let markers = find_markers(
        &dist,
        grid.dims,
        cfg.segmentation.min_distance,
        cfg.segmentation.min_height,
    );
    let valleys = if cfg.segmentation.use_valleys {
        Some(granum::edt::signed_distance(grid)?.data)
    } else {
        None
    };
    let labels = watershed(
        &dist,
        &markers,
        grid,
        valleys.as_deref(),
        cfg.segmentation.valley_weight,
    )?;
    let grains = refine_grains(
        &labels,
        cfg.segmentation.erosion_steps,
        cfg.segmentation.smoothing_iters,
    )?;
    Ok((labels, grains))
}

pub fn run_segment(cfg: &RunConfig, data: &Path, id: Option<&str>, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    echo_config(cfg, &out_dir.join("resolved_config.json"))?;
    let grid = load_grid(data, id)?;
    let (labels, grains) = segment_grid(cfg, &grid)?;
    write_labels(out_dir, &labels)?;
    if !grains.grains.is_empty() {
        std::fs::write(
            out_dir.join("grains.tri"),
            export_grains(&grains, ExportFormat::TriList)?,
        )?;
        std::fs::write(
            out_dir.join("grains.table"),
            export_grains(&grains, ExportFormat::PolyhedronTable)?,
        )?;
    }
    eprintln!(
        "segment: {:?} -> {} grains ({} dropped) -> {}",
        grid.dims,
        grains.grains.len(),
        grains.dropped,
        out_dir.display()
    );
    Ok(())
}

pub fn run_stats(
    cfg: &RunConfig,
    data: &Path,
    id: Option<&str>,
    labels_dir: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    echo_config(cfg, &out_dir.join("resolved_config.json"))?;
    let grid = load_grid(data, id)?;
    let labels = labels_dir.map(read_labels).transpose()?;
    let grains = labels
        .as_ref()
        .map(|l| {
            refine_grains(
                l,
                cfg.segmentation.erosion_steps,
                cfg.segmentation.smoothing_iters,
            )
        })
        .transpose()?;
    let mut provenance = std::collections::BTreeMap::new();
    provenance.insert("data".into(), data.display().to_string());
    if let Some(id) = id {
        provenance.insert("entry".into(), id.to_string());
    }
    provenance.insert("seed".into(), cfg.seed.to_string());
    let rep = report(&grid, labels.as_ref(), grains.as_ref(), provenance)?;
    std::fs::write(out_dir.join("dashboard.json"), rep.to_json()?)?;
    if let (Some(labels), Some(grains)) = (labels.as_ref(), grains.as_ref()) {
        let graph = contact_graph(labels, cfg.segmentation.contact_tolerance);
        std::fs::write(out_dir.join("grains.csv"), per_grain_csv(grains, Some(&graph)))?;
    }
    eprintln!(
        "stats: phi={:.4}, {} grains -> {}",
        rep.packing_density,
        rep.grain_count,
        out_dir.display()
    );
    Ok(())
}

/// synth -> train (both nets) -> sample -> stitch -> segment -> stats, all
/// driven by one seed. Stage seeds derive deterministically from it.
pub fn run_pipeline(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    echo_config(cfg, &out_dir.join("resolved_config.json"))?;
    let s = cfg.seed;
    // Stage seed derivation is part of the contract: scene s, unconditional
    // training s+1, inpainting training s+2, sampling s+3, stitching s+4.
    let mut scene_cfg = cfg.scene.clone();
    scene_cfg.seed = s;
    let dataset_entries = make_dataset(&scene_cfg, cfg.pipeline.scene_count, cfg.block_dims)?;
    write_archive(out_dir.join("dataset.tar"), &dataset_entries)?;
    let dataset: Vec<VoxelGrid> = dataset_entries
        .iter()
        .map(granum::archive::decode_entry)
        .collect::<Result<_>>()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let sched = schedule(cfg)?;
    let sample_plan = plan(cfg)?;

    let mut uncond_cfg = cfg.train.clone();
    uncond_cfg.seed = s + 1;
    let mut uncond = DenoiserNet::build(
        UNetConfig {
            in_channels: 1,
            ..cfg.net.clone()
        },
        uncond_cfg.seed,
    )?;
    let rep_u = train(&mut uncond, &dataset, &uncond_cfg, &sched, TrainMode::Unconditional)?;
    save_checkpoint(out_dir.join("unconditional.grnc"), &uncond, uncond_cfg.seed, uncond_cfg.epochs)?;

    let mut inpaint_cfg = cfg.train.clone();
    inpaint_cfg.seed = s + 2;
    let mut inpaint_net = DenoiserNet::build(
        UNetConfig {
            in_channels: 3,
            ..cfg.net.clone()
        },
        inpaint_cfg.seed,
    )?;
    let rep_i = train(&mut inpaint_net, &dataset, &inpaint_cfg, &sched, TrainMode::Inpainting)?;
    save_checkpoint(out_dir.join("inpainting.grnc"), &inpaint_net, inpaint_cfg.seed, inpaint_cfg.epochs)?;

    let mut loss_csv = String::from("net,step,loss\n");
    for (i, l) in rep_u.step_losses.iter().enumerate() {
        loss_csv.push_str(&format!("unconditional,{i},{l:.12e}\n"));
    }
    for (i, l) in rep_i.step_losses.iter().enumerate() {
        loss_csv.push_str(&format!("inpainting,{i},{l:.12e}\n"));
    }
    std::fs::write(out_dir.join("loss.csv"), loss_csv)?;

    let samples = sample_unconditional(
        &uncond,
        &sched,
        &sample_plan,
        cfg.block_dims,
        cfg.scene.pitch,
        cfg.pipeline.sample_count,
        s + 3,
        cfg.sampler.sampler(),
    )?;
    let sample_entries: Vec<ArchiveEntry> = samples
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let mut m = Metadata::new();
            m.insert(
                "phi".into(),
                format!("{:.6}", g.foreground_count() as f64 / g.len() as f64),
            );
            encode_entry(g, &format!("sample{i:03}"), m)
        })
        .collect::<Result<_>>()?;
    write_archive(out_dir.join("samples.tar"), &sample_entries)?;

    let n_stitch = cfg.pipeline.stitch_blocks.min(samples.len()).max(2);
    let spec = SeamSpec {
        axis: cfg.seam.axis,
        block_depth: cfg.block_dims[cfg.seam.axis.index()],
        overlap: cfg.seam.overlap,
        context: cfg.seam.context,
    };
    let stitched = stitch_sequence(
        &samples[..n_stitch],
        &spec,
        &inpaint_net,
        &sched,
        &sample_plan,
        s + 4,
        cfg.sampler.sampler(),
    )?;
    let mut meta = Metadata::new();
    meta.insert("n_blocks".into(), n_stitch.to_string());
    meta.insert(
        "depth".into(),
        stitched.dims[cfg.seam.axis.index()].to_string(),
    );
    write_archive(
        out_dir.join("stitched.tar"),
        &[encode_entry(&stitched, "stitched", meta)?],
    )?;

    let (labels, grains) = segment_grid(cfg, &stitched)?;
    write_labels(out_dir, &labels)?;
    if !grains.grains.is_empty() {
        std::fs::write(
            out_dir.join("grains.tri"),
            export_grains(&grains, ExportFormat::TriList)?,
        )?;
        std::fs::write(
            out_dir.join("grains.table"),
            export_grains(&grains, ExportFormat::PolyhedronTable)?,
        )?;
    }
    let mut provenance = std::collections::BTreeMap::new();
    provenance.insert("pipeline_seed".into(), s.to_string());
    provenance.insert("scenes".into(), cfg.pipeline.scene_count.to_string());
    provenance.insert("samples".into(), cfg.pipeline.sample_count.to_string());
    provenance.insert("stitched_blocks".into(), n_stitch.to_string());
    let rep = report(&stitched, Some(&labels), Some(&grains), provenance)?;
    std::fs::write(out_dir.join("dashboard.json"), rep.to_json()?)?;
    let graph = contact_graph(&labels, cfg.segmentation.contact_tolerance);
    std::fs::write(
        out_dir.join("grains.csv"),
        per_grain_csv(&grains, Some(&graph)),
    )?;
    eprintln!(
        "pipeline: {} blocks trained, stitched {:?}, {} grains, phi={:.4} -> {}",
        dataset.len(),
        stitched.dims,
        rep.grain_count,
        rep.packing_density,
        out_dir.display()
    );
    Ok(())
}

