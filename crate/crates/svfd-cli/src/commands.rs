//! Subcommand implementations.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use svfd::augment::{augment_dataset, AugmentInput};
use svfd::distances::{
    chamfer, chamfer_normals, chamfer_point_to_plane, chamfer_point_to_plane_weighted,
    chamfer_weighted, local_distances, sinkhorn_divergence, summary, SinkhornConfig,
};
use svfd::flow::{integrate_backward_modified, integrate_forward, NetField};
use svfd::geometry::{
    mesh_to_weighted_cloud, normalize_to_unit_cube, synth_shape, synth_vessel_model, SynthShape,
    UnitCubeTransform, VesselModel, WeightedPointCloud,
};
use svfd::io::{load_shape_cloud, read_mesh_ply, write_cloud_ply, write_mesh_ply, PlyFormat};
use svfd::latent::{
    empirical_covariance, generate_shape, interpolate_codes, pca_project, sample_codes, CodeMatrix,
};
use svfd::network::{
    load_checkpoint, reshape_code, save_checkpoint, Checkpoint, ShapeCode, VelocityNet,
};
use svfd::training::{infer_code, train_with_callback, TrainConfig};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::svg::{scatter_svg, Series};

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", path.display())))
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "shape".to_string())
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Local-distance summaries of both map directions in normalized and
/// physical units. Physical values are exact: the clouds are carried back
/// through the inverse unit-cube transform and re-measured.
fn dual_diagnostics(
    net: &VelocityNet,
    code: &ShapeCode,
    source: &WeightedPointCloud,
    template: &WeightedPointCloud,
    transform: &UnitCubeTransform,
    steps: usize,
) -> Result<Value> {
    let grid = reshape_code(code, net.arch.g_z).map_err(CliError::from)?;
    let field = NetField { net, grid: &grid };
    let fwd = integrate_forward(&field, &source.points_matrix().view(), steps)?;
    let mapped = source.with_points_matrix(fwd.mapped(), false)?;
    let bwd = integrate_backward_modified(&field, &template.points_matrix().view(), steps)?;
    let inv_mapped = template.with_points_matrix(bwd.inverse_mapped(), false)?;

    let block = |a: &WeightedPointCloud, b: &WeightedPointCloud| -> Result<Value> {
        let (fld, bld) = local_distances(a, b)?;
        let (fm, fx) = summary(&fld);
        let (bm, bx) = summary(&bld);
        Ok(json!({"fld_mean": fm, "fld_max": fx, "bld_mean": bm, "bld_max": bx}))
    };
    let direct_norm = block(&mapped, template)?;
    let inverse_norm = block(&inv_mapped, source)?;
    let direct_phys = block(
        &transform.invert_cloud(&mapped)?,
        &transform.invert_cloud(template)?,
    )?;
    let inverse_phys = block(
        &transform.invert_cloud(&inv_mapped)?,
        &transform.invert_cloud(source)?,
    )?;
    Ok(json!({
        "unit_cube": {"direct": direct_norm, "inverse": inverse_norm},
        "physical": {"direct": direct_phys, "inverse": inverse_phys},
    }))
}

pub fn train(
    config: &RunConfig,
    template_path: &Path,
    source_paths: &[PathBuf],
    out: &Path,
    checkpoint_every: Option<usize>,
) -> Result<()> {
    let cfg = config.train_config()?;
    ensure_dir(out)?;
    write_json(&out.join("effective_config.json"), &config.dump())?;

    let template_raw = load_shape_cloud(template_path)?;
    let mut clouds = vec![template_raw];
    let mut ids = Vec::new();
    for path in source_paths {
        clouds.push(load_shape_cloud(path)?);
        ids.push(stem_of(path));
    }
    let (normalized, transform) = normalize_to_unit_cube(&clouds)?;
    let template = normalized[0].clone();
    let sources = &normalized[1..];

    // cap the sample size at the smallest cloud so small fixtures run with
    // default configs
    let min_size = sources
        .iter()
        .map(|c| c.len())
        .chain(std::iter::once(template.len()))
        .min()
        .unwrap();
    let mut cfg = cfg;
    if cfg.sample_points > min_size {
        log::warn!(
            "sample_points {} exceeds the smallest cloud ({min_size}); clamping",
            cfg.sample_points
        );
        cfg.sample_points = min_size;
    }

    let ckpt_path = out.join("model.ckpt");
    let history_path = out.join("loss_history.csv");
    let make_ckpt = |net: &VelocityNet, codes: &[ShapeCode]| Checkpoint {
        net: net.clone(),
        codes: codes.to_vec(),
        code_ids: ids.clone(),
        template: Some(template.clone()),
        transform: Some(transform),
    };

    let trained = train_with_callback(sources, &template, &cfg, |stats, net, codes| {
        if stats.epoch % 20 == 0 {
            log::info!("epoch {}: loss {:.6e}", stats.epoch, stats.total);
        }
        if let Some(every) = checkpoint_every {
            if every > 0 && (stats.epoch + 1) % every == 0 {
                save_checkpoint(&ckpt_path, &make_ckpt(net, codes))?;
            }
        }
        Ok(())
    });
    let trained = match trained {
        Ok(t) => t,
        Err(e) => {
            // best-effort partial state is not available from a failed run;
            // surface the error after noting it
            log::error!("training aborted: {e}");
            return Err(e.into());
        }
    };

    save_checkpoint(&ckpt_path, &make_ckpt(&trained.net, &trained.codes))?;

    let mut csv = String::from("epoch,total,direct,inverse,code_reg,theta_reg,kinetic\n");
    for s in &trained.history {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.epoch, s.total, s.direct, s.inverse, s.code_reg, s.theta_reg, s.kinetic
        ));
    }
    std::fs::write(&history_path, csv)
        .map_err(|e| CliError::io(format!("cannot write loss history: {e}")))?;

    let mut shapes = serde_json::Map::new();
    for (i, id) in ids.iter().enumerate() {
        let diag = dual_diagnostics(
            &trained.net,
            &trained.codes[i],
            &sources[i],
            &template,
            &transform,
            cfg.steps,
        )?;
        shapes.insert(id.clone(), diag);
    }
    let summary_json = json!({
        "template": stem_of(template_path),
        "epochs": cfg.epochs,
        "final_loss": trained.history.last().map(|s| s.total),
        "shapes": Value::Object(shapes),
    });
    write_json(&out.join("summary.json"), &summary_json)?;
    println!(
        "trained {} shapes for {} epochs; checkpoint at {}",
        ids.len(),
        cfg.epochs,
        ckpt_path.display()
    );
    Ok(())
}

fn load_checkpoint_full(path: &Path) -> Result<(Checkpoint, WeightedPointCloud, UnitCubeTransform)> {
    let ckpt = load_checkpoint(path)?;
    let template = ckpt
        .template
        .clone()
        .ok_or_else(|| CliError::validation("checkpoint has no embedded template cloud"))?;
    let transform = ckpt
        .transform
        .ok_or_else(|| CliError::validation("checkpoint has no unit-cube transform"))?;
    Ok((ckpt, template, transform))
}

pub fn infer(config: &RunConfig, checkpoint: &Path, shape: &Path, out: &Path) -> Result<()> {
    let cfg = config.train_config()?;
    ensure_dir(out)?;
    let (ckpt, template, transform) = load_checkpoint_full(checkpoint)?;
    if ckpt.net.arch != cfg.arch {
        log::info!(
            "using checkpoint architecture ({} parameters), ignoring configured arch",
            ckpt.net.param_count()
        );
    }
    let cfg = TrainConfig { arch: ckpt.net.arch, ..cfg };

    let raw = load_shape_cloud(shape)?;
    let normalized = transform.apply_cloud(&raw)?;
    let (code, report) = infer_code(&normalized, &template, &ckpt.net, &cfg)?;

    write_json(
        &out.join("code.json"),
        &json!({
            "id": stem_of(shape),
            "values": code.values.to_vec(),
        }),
    )?;

    // mapped clouds in physical units, both directions
    let grid = reshape_code(&code, ckpt.net.arch.g_z)?;
    let field = NetField { net: &ckpt.net, grid: &grid };
    let fwd = integrate_forward(&field, &normalized.points_matrix().view(), cfg.steps)?;
    let mapped = transform.invert_cloud(&normalized.with_points_matrix(fwd.mapped(), false)?)?;
    write_cloud_ply(&mapped, &out.join("mapped_direct.ply"), PlyFormat::BinaryLittleEndian)?;
    let bwd = integrate_backward_modified(&field, &template.points_matrix().view(), cfg.steps)?;
    let inv_mapped =
        transform.invert_cloud(&template.with_points_matrix(bwd.inverse_mapped(), false)?)?;
    write_cloud_ply(&inv_mapped, &out.join("mapped_inverse.ply"), PlyFormat::BinaryLittleEndian)?;

    let diagnostics = dual_diagnostics(&ckpt.net, &code, &normalized, &template, &transform, cfg.steps)?;
    write_json(
        &out.join("diagnostics.json"),
        &json!({
            "shape": stem_of(shape),
            "measure": report.measure.to_string(),
            "adam_loss": report.adam_loss,
            "lbfgs_loss": report.lbfgs_loss,
            "local_distances": diagnostics,
        }),
    )?;
    println!(
        "inferred code for {}: direct max FLD {:.6} (unit cube)",
        stem_of(shape),
        report.direct.fld_max
    );
    Ok(())
}

fn parse_code_file(path: &Path, n_z: usize) -> Result<Vec<ShapeCode>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)?;
    let rows: Vec<Vec<f64>> = if let Some(values) = value.get("values") {
        vec![serde_json::from_value(values.clone())?]
    } else if let Some(codes) = value.get("codes") {
        serde_json::from_value(codes.clone())?
    } else {
        serde_json::from_value(value)?
    };
    rows.into_iter()
        .map(|row| {
            if row.len() != n_z {
                return Err(CliError::validation(format!(
                    "code has {} entries, the model expects {n_z}",
                    row.len()
                )));
            }
            Ok(ShapeCode::from_vec(row))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn generate(
    config: &RunConfig,
    checkpoint: &Path,
    mode: &str,
    n: usize,
    ids: Option<&[String]>,
    ts: &[f64],
    code_file: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cfg = config.train_config()?;
    ensure_dir(out)?;
    let (ckpt, template, transform) = load_checkpoint_full(checkpoint)?;
    let steps = cfg.steps;

    let matrix = CodeMatrix::new(ckpt.code_ids.clone(), ckpt.codes.clone())?;
    let samples: Vec<(String, ShapeCode)> = match mode {
        "gaussian" => {
            if matrix.n_shapes() < 2 {
                return Err(CliError::validation(
                    "gaussian sampling needs at least 2 training codes for the covariance",
                ));
            }
            let cov = empirical_covariance(&matrix)?;
            sample_codes(&cov, n, cfg.seed)?
                .into_iter()
                .enumerate()
                .map(|(i, c)| (format!("sample_{i:03}"), c))
                .collect()
        }
        "interpolate" => {
            let ids = ids.ok_or_else(|| {
                CliError::validation("interpolate mode needs --ids <a> <b>")
            })?;
            let find = |wanted: &str| -> Result<&ShapeCode> {
                matrix
                    .ids
                    .iter()
                    .position(|id| id == wanted)
                    .map(|i| &matrix.codes[i])
                    .ok_or_else(|| {
                        CliError::validation(format!("unknown training code id '{wanted}'"))
                    })
            };
            let a = find(&ids[0])?;
            let b = find(&ids[1])?;
            ts.iter()
                .map(|&t| {
                    Ok((
                        format!("interp_{t:.2}"),
                        interpolate_codes(a, b, t)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?
        }
        "code-file" => {
            let path = code_file
                .ok_or_else(|| CliError::validation("code-file mode needs --code-file"))?;
            parse_code_file(path, ckpt.net.arch.n_z)?
                .into_iter()
                .enumerate()
                .map(|(i, c)| (format!("code_{i:03}"), c))
                .collect()
        }
        other => return Err(CliError::validation(format!("unknown mode '{other}'"))),
    };

    for (name, code) in &samples {
        let generated = generate_shape(code, &template, &ckpt.net, steps)?;
        let physical = transform.invert_cloud(&generated)?;
        write_cloud_ply(
            &physical,
            &out.join(format!("{name}.ply")),
            PlyFormat::BinaryLittleEndian,
        )?;
    }

    // latent scatter: training codes plus the sampled ones on the same axes
    if matrix.n_shapes() >= 2 {
        let pca = pca_project(&matrix, 2)?;
        let mut csv = String::from("id,kind,pc1,pc2\n");
        let mut train_points = Vec::new();
        for (id, proj) in matrix.ids.iter().zip(&pca.projections) {
            csv.push_str(&format!("{id},training,{},{}\n", proj[0], proj[1]));
            train_points.push((proj[0], proj[1]));
        }
        let mut sample_points = Vec::new();
        for (name, code) in &samples {
            let p = pca.project(code)?;
            csv.push_str(&format!("{name},sampled,{},{}\n", p[0], p[1]));
            sample_points.push((p[0], p[1]));
        }
        std::fs::write(out.join("latent_scatter.csv"), csv)
            .map_err(|e| CliError::io(e.to_string()))?;
        let svg = scatter_svg(
            "latent codes (PCA)",
            &[
                Series {
                    label: "training",
                    color: "#1f77b4",
                    points: train_points,
                },
                Series {
                    label: "sampled",
                    color: "#d62728",
                    points: sample_points,
                },
            ],
        );
        std::fs::write(out.join("latent_scatter.svg"), svg)
            .map_err(|e| CliError::io(e.to_string()))?;
    }
    println!("generated {} shapes into {}", samples.len(), out.display());
    Ok(())
}

pub fn augment(config: &RunConfig, models_dir: &Path, n: usize, out: &Path) -> Result<()> {
    let cfg = config.augment_config()?;
    let seed = config.train_config()?.seed;
    ensure_dir(out)?;

    let mut inputs = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(models_dir)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", models_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    entries.sort();
    for model_path in entries {
        let mesh_path = model_path.with_extension("ply");
        if !mesh_path.exists() {
            return Err(CliError::validation(format!(
                "vessel model {} has no mesh {}",
                model_path.display(),
                mesh_path.display()
            )));
        }
        let model = VesselModel::from_json(
            &std::fs::read_to_string(&model_path).map_err(|e| CliError::io(e.to_string()))?,
        )?;
        inputs.push(AugmentInput {
            id: stem_of(&model_path),
            mesh: read_mesh_ply(&mesh_path)?,
            model,
        });
    }
    if inputs.len() < 2 {
        return Err(CliError::validation(format!(
            "need at least 2 paired model/mesh files in {}, found {}",
            models_dir.display(),
            inputs.len()
        )));
    }

    let result = augment_dataset(&inputs, n, &cfg, seed)?;
    for (i, mesh) in result.meshes.iter().enumerate() {
        write_mesh_ply(
            mesh,
            &out.join(format!("aug_{i:03}.ply")),
            PlyFormat::BinaryLittleEndian,
        )?;
    }
    let mut csv =
        String::from("source,target,portions,factors,min_scaled_jacobian,bottom_decile_mean,accepted\n");
    for r in &result.records {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.source_id,
            r.target_id,
            r.portions.join("+"),
            r.factors
                .iter()
                .map(|f| format!("{f:.4}"))
                .collect::<Vec<_>>()
                .join("+"),
            r.min_scaled_jacobian,
            r.bottom_decile_mean,
            r.accepted
        ));
    }
    std::fs::write(out.join("report.csv"), csv).map_err(|e| CliError::io(e.to_string()))?;
    println!(
        "accepted {} of {} requested variants ({} attempts)",
        result.meshes.len(),
        n,
        result.records.len()
    );
    if result.budget_exhausted {
        return Err(CliError::Numeric(format!(
            "attempt budget exhausted with {} of {n} variants accepted; partial output kept in {}",
            result.meshes.len(),
            out.display()
        )));
    }
    Ok(())
}

pub fn metrics(
    a_path: &Path,
    b_path: &Path,
    measures: &[String],
    w_n: Option<f64>,
    epsilon: Option<f64>,
    scaling: Option<f64>,
    out: Option<&Path>,
) -> Result<()> {
    let a = load_shape_cloud(a_path)?;
    let b = load_shape_cloud(b_path)?;
    let both_normals = a.has_normals() && b.has_normals();

    let requested: Vec<String> = if measures.is_empty() {
        let mut m = vec!["cd".to_string(), "cdw".to_string(), "fld".to_string()];
        if both_normals {
            m.push("pcd".to_string());
            m.push("pcdw".to_string());
        }
        if w_n.is_some() {
            m.push("ncd".to_string());
        }
        if epsilon.is_some() {
            m.push("sd".to_string());
        }
        m
    } else {
        measures.iter().map(|m| m.to_ascii_lowercase()).collect()
    };

    let mut report = serde_json::Map::new();
    for measure in &requested {
        let value = match measure.as_str() {
            "cd" => json!(chamfer(&a, &b)?),
            "cdw" => json!(chamfer_weighted(&a, &b)?),
            "pcd" => {
                require_normals(both_normals, "pcd")?;
                json!(chamfer_point_to_plane(&a, &b)?)
            }
            "pcdw" => {
                require_normals(both_normals, "pcdw")?;
                json!(chamfer_point_to_plane_weighted(&a, &b)?)
            }
            "ncd" => {
                require_normals(both_normals, "ncd")?;
                json!(chamfer_normals(&a, &b, w_n.unwrap_or(1e-2))?)
            }
            "sd" => {
                let cfg = SinkhornConfig {
                    epsilon: epsilon.unwrap_or(1e-4),
                    scaling: scaling.unwrap_or(0.9),
                    ..SinkhornConfig::default()
                };
                json!(sinkhorn_divergence(&a, &b, &cfg)?)
            }
            "fld" => {
                let (fld, bld) = local_distances(&a, &b)?;
                let (fm, fx) = summary(&fld);
                let (bm, bx) = summary(&bld);
                json!({"fld_mean": fm, "fld_max": fx, "bld_mean": bm, "bld_max": bx})
            }
            other => {
                return Err(CliError::validation(format!(
                    "unknown measure '{other}' (expected cd, cdw, pcd, pcdw, ncd, sd, or fld)"
                )))
            }
        };
        report.insert(measure.clone(), value);
    }
    let value = Value::Object(report);
    match out {
        Some(path) => write_json(path, &value)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{}", serde_json::to_string_pretty(&value)?)
                .map_err(|e| CliError::io(e.to_string()))?;
        }
    }
    Ok(())
}

fn require_normals(both: bool, measure: &str) -> Result<()> {
    if !both {
        return Err(CliError::validation(format!(
            "measure '{measure}' needs normals on both clouds; provide meshes or PLY clouds with nx/ny/nz"
        )));
    }
    Ok(())
}

pub fn geodesic(
    config: &RunConfig,
    checkpoint: &Path,
    shape: &Path,
    id: Option<&str>,
    code_file: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let cfg = config.train_config()?;
    ensure_dir(out)?;
    let (ckpt, template, transform) = load_checkpoint_full(checkpoint)?;
    let code = match (id, code_file) {
        (Some(id), _) => {
            let idx = ckpt
                .code_ids
                .iter()
                .position(|c| c == id)
                .ok_or_else(|| CliError::validation(format!("unknown training code id '{id}'")))?;
            ckpt.codes[idx].clone()
        }
        (None, Some(path)) => parse_code_file(path, ckpt.net.arch.n_z)?
            .into_iter()
            .next()
            .ok_or_else(|| CliError::validation("code file is empty"))?,
        (None, None) => {
            return Err(CliError::validation("geodesic needs --id or --code-file"))
        }
    };

    let raw = load_shape_cloud(shape)?;
    let normalized = transform.apply_cloud(&raw)?;
    let grid = reshape_code(&code, ckpt.net.arch.g_z)?;
    let field = NetField { net: &ckpt.net, grid: &grid };

    let fwd = integrate_forward(&field, &normalized.points_matrix().view(), cfg.steps)?;
    for (k, state) in fwd.states.iter().enumerate() {
        let snapshot = transform.invert_cloud(&normalized.with_points_matrix(state, false)?)?;
        write_cloud_ply(
            &snapshot,
            &out.join(format!("forward_{k:02}.ply")),
            PlyFormat::BinaryLittleEndian,
        )?;
    }
    let bwd = integrate_backward_modified(&field, &template.points_matrix().view(), cfg.steps)?;
    for (k, state) in bwd.states.iter().enumerate() {
        let snapshot = transform.invert_cloud(&template.with_points_matrix(state, false)?)?;
        write_cloud_ply(
            &snapshot,
            &out.join(format!("backward_{k:02}.ply")),
            PlyFormat::BinaryLittleEndian,
        )?;
    }
    println!(
        "wrote {} forward and {} backward snapshots to {}",
        fwd.states.len(),
        bwd.states.len(),
        out.display()
    );
    Ok(())
}

pub fn synth(
    kind: &str,
    resolution: usize,
    semi_axes: &[f64],
    radius: f64,
    length: f64,
    out: &Path,
) -> Result<()> {
    let shape = match kind {
        "sphere" => SynthShape::Ellipsoid {
            semi_axes: [radius.max(1e-9); 3],
        },
        "ellipsoid" => {
            if semi_axes.len() != 3 {
                return Err(CliError::validation("--semi-axes needs 3 values"));
            }
            SynthShape::Ellipsoid {
                semi_axes: [semi_axes[0], semi_axes[1], semi_axes[2]],
            }
        }
        "tube" => SynthShape::Tube {
            radius_start: radius,
            radius_end: radius,
            length,
            bend_angle: 0.0,
        },
        "tube-bent" => SynthShape::Tube {
            radius_start: radius,
            radius_end: 0.75 * radius,
            length,
            bend_angle: 0.7,
        },
        "y-branch" => SynthShape::YBranch {
            trunk_radius: radius,
            trunk_length: length,
            branch_radius: 0.6 * radius,
            branch_length: 0.6 * length,
            spread_angle: 0.5,
        },
        other => return Err(CliError::validation(format!("unknown kind '{other}'"))),
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    let mesh = synth_shape(&shape, resolution)?;
    let mesh_path = out.with_extension("ply");
    write_mesh_ply(&mesh, &mesh_path, PlyFormat::BinaryLittleEndian)?;
    let mut wrote_model = false;
    if matches!(shape, SynthShape::Tube { .. } | SynthShape::YBranch { .. }) {
        let model = synth_vessel_model(&shape)?;
        std::fs::write(out.with_extension("json"), model.to_json()?)
            .map_err(|e| CliError::io(e.to_string()))?;
        wrote_model = true;
    }
    println!(
        "wrote {} ({} faces{})",
        mesh_path.display(),
        mesh.face_count(),
        if wrote_model { ", with vessel model" } else { "" }
    );
    let _ = mesh_to_weighted_cloud(&mesh)?; // sanity: the mesh yields a valid cloud
    Ok(())
}
