"""Pipeline driver: every stage of the offset-image workflow as a subcommand.

Artifacts are plain files (OBJ, .cimg rasters with a .meta.json sidecar,
PNG previews, model blobs, dataset directories), every run writes its
resolved configuration plus a short hash next to its outputs, and all
randomness flows through explicit seeds, so rerunning a command reproduces
its artifacts byte for byte. Logs go to stderr; exit codes are 0 on
success, 1 on stage errors, 2 on usage errors.
"""

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import nn, oracle, pca, training
from .body import (CORRUPT_MODES, BodyConfig, build_procedural_body,
                   corrupt_weights)
from .cage import segment_patches
from .clothimage import (Blend, Brush, ChannelOffset, ChannelScale,
                         edit_image, export_png, load_cimg, rasterize,
                         sample_at_uv, save_cimg)
from .embedding import (OFFSET_CAP_NECKTIE, OFFSET_CAP_TEE, OffsetField,
                        apply_offsets, embed_pixels, encode_offsets,
                        load_embedding, save_embedding, shrink_wrap)
from .garments import (cage_displacements_to_body, make_necktie_garment,
                       make_tee_garment)
from .losses import (BilinearPlan, LossWeights, make_geom_target,
                     normal_term, vertex_unit_normals)
from .meshcore import TriMesh, load_obj, save_obj
from .skeleton import feature_to_pose, load_pose_batch, sample_pose

log = logging.getLogger("clothpix")

GARMENT_BUILDERS = {"tee": make_tee_garment, "necktie": make_necktie_garment}
GARMENT_CAPS = {"tee": OFFSET_CAP_TEE, "necktie": OFFSET_CAP_NECKTIE}


def _config_hash(doc):
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _emit_config(target, stage, args):
    """Resolved run config next to the output (inside it for directories)."""
    doc = {"stage": stage}
    doc.update({k: v for k, v in sorted(vars(args).items())
                if k not in ("func",)})
    doc["config_hash"] = _config_hash(doc)
    path = (os.path.join(target, "config.json") if os.path.isdir(target)
            else str(target) + ".config.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    return doc["config_hash"]


def _require(path):
    if not os.path.exists(path):
        raise FileNotFoundError("input not found: %s" % path)
    return path


def _load_body(path):
    if path is None:
        return build_procedural_body()
    with open(_require(path), "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    body = build_procedural_body(BodyConfig.from_json(doc["config"]))
    if doc.get("corrupt"):
        body = corrupt_weights(body, doc["corrupt"])
    if doc.get("content_hash") and doc["content_hash"] != body.content_hash():
        raise ValueError("body file %s hash mismatch on rebuild" % path)
    return body


def _garment(name):
    try:
        return GARMENT_BUILDERS[name]()
    except KeyError:
        raise ValueError("unknown garment %r (choose from %s)"
                         % (name, sorted(GARMENT_BUILDERS)))


def _build_wrap(garment, body):
    graph = segment_patches(garment.mesh, garment.cage_loops)
    disp = cage_displacements_to_body(garment, graph.cage_vertices, body)
    wrapped, info = shrink_wrap(garment.mesh, body, disp)
    return wrapped, info, graph


def _save_cimg_meta(img, path):
    save_cimg(img, path)
    meta = {"uv_windows": [list(w) for w in img.uv_windows],
            "charts": list(img.charts), "frame_mode": img.frame_mode}
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True)


def _load_cimg_meta(path):
    _require(path)
    meta_path = str(path) + ".meta.json"
    with open(_require(meta_path), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    return load_cimg(path,
                     uv_windows=tuple(tuple(w) for w in meta["uv_windows"]),
                     charts=tuple(meta["charts"]),
                     frame_mode=meta["frame_mode"])


def _load_target_positions(path, cloth):
    """Load an OBJ and return its positions in the garment's vertex order.

    OBJ faces index positions and texture coordinates independently, so a
    round trip may renumber vertices; garment UVs are unique per vertex and
    survive the trip exactly, which makes them the join key.
    """
    loaded, warn = load_obj(_require(path))
    for msg in warn:
        log.warning("%s: %s", path, msg)
    if loaded.n_vertices != cloth.n_vertices:
        raise ValueError("target mesh has %d vertices, garment has %d"
                         % (loaded.n_vertices, cloth.n_vertices))
    ref = {tuple(k): i for i, k in enumerate(np.round(cloth.uv, 9))}
    positions = np.empty((cloth.n_vertices, 3))
    seen = np.zeros(cloth.n_vertices, dtype=bool)
    for j, key in enumerate(map(tuple, np.round(loaded.uv, 9))):
        i = ref.get(key)
        if i is None or seen[i]:
            raise ValueError("OBJ texture coordinates do not match the "
                             "garment UV layout (vertex %d)" % j)
        positions[i] = loaded.vertices[j]
        seen[i] = True
    return positions


def _load_pose(path):
    poses = load_pose_batch(_require(path))
    if len(poses) != 1:
        raise ValueError("pose file %s holds %d poses, expected exactly 1"
                         % (path, len(poses)))
    return poses[0]


def _read_manifest(dirpath):
    with open(_require(os.path.join(dirpath, "manifest.json")), "r",
              encoding="utf-8") as fh:
        return json.load(fh)


def _dataset_pose(manifest, body, index):
    """Regenerate the exact pose of one dataset sample from provenance."""
    prov = manifest["provenance"]
    candidate = prov["candidates"][index]
    return sample_pose(body.skeleton,
                       oracle._candidate_rng(prov["seed"], candidate))


def _resolution_arg(text):
    parts = [int(x) for x in text.split(",")]
    return parts[0] if len(parts) == 1 else (parts[0], parts[1])


def _manifest_resolution(manifest):
    res = manifest["resolution"]
    return res[0] if len(res) == 1 else (res[0], res[1])


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_body(args):
    cfg = BodyConfig(thickness_scale=args.thickness_scale)
    body = build_procedural_body(cfg)
    if args.corrupt:
        body = corrupt_weights(body, args.corrupt)
    doc = {"config": cfg.to_json(), "corrupt": args.corrupt,
           "content_hash": body.content_hash()}
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
    if args.obj:
        save_obj(body.mesh, args.obj)
    log.info("body %s (%d vertices) -> %s", body.content_hash(),
             body.mesh.n_vertices, args.out)
    _emit_config(args.out, "gen-body", args)
    return 0


def cmd_embed(args):
    body = _load_body(args.body)
    garment = _garment(args.garment)
    wrapped, info, _ = _build_wrap(garment, body)
    emb = embed_pixels(wrapped, body, frame_mode=args.frame_mode)
    save_embedding(args.out, emb)
    if args.wrapped_obj:
        save_obj(TriMesh(wrapped, garment.mesh.triangles, garment.mesh.uv,
                         garment.mesh.chart_id), args.wrapped_obj)
    log.info("wrap spread %.4f after %d iterations; embedding -> %s",
             info.spread_history[-1], info.iterations, args.out)
    _emit_config(args.out, "embed", args)
    return 0


def cmd_gen_dataset(args):
    body = _load_body(args.body)
    garment = _garment(args.garment)
    wrapped, _, _ = _build_wrap(garment, body)
    emb = embed_pixels(wrapped, body, frame_mode=args.frame_mode)
    spec = oracle.make_oracle_spec(args.oracle_seed, body.skeleton,
                                   garment.mesh, frame_mode=args.frame_mode,
                                   cap=GARMENT_CAPS[args.garment])
    joints = None
    if args.feature_joints:
        joints = [body.skeleton.joint_index(n)
                  for n in args.feature_joints.split(",")]
    ds = oracle.generate_dataset(args.n, body, garment.mesh, emb, spec,
                                 seed=args.seed, feature_joints=joints)
    os.makedirs(args.out, exist_ok=True)
    oracle.save_dataset(args.out, ds, garment.mesh, args.resolution,
                        pad_rings=args.pad_rings)
    save_embedding(os.path.join(args.out, "embedding.json"), emb)
    log.info("dataset %s: %d samples (%d pruned poses, %d distorted) -> %s",
             ds.content_hash(), args.n, ds.provenance["n_pruned"],
             ds.provenance["n_distorted"], args.out)
    _emit_config(args.out, "gen-dataset", args)
    return 0


def cmd_encode(args):
    body = _load_body(args.body)
    garment = _garment(args.garment)
    emb = load_embedding(_require(args.emb))
    pose = _load_pose(args.pose_file)
    target = _load_target_positions(args.obj, garment.mesh)
    field = encode_offsets(target, emb, body, pose,
                           cap=GARMENT_CAPS[args.garment])
    img = rasterize(field, garment.mesh, args.resolution,
                    pad_rings=args.pad_rings)
    _save_cimg_meta(img, args.out)
    log.info("encoded %s -> %s (max |dx| %.3f cm)", args.obj, args.out,
             np.abs(field.values).max())
    _emit_config(args.out, "encode", args)
    return 0


def cmd_decode(args):
    body = _load_body(args.body)
    garment = _garment(args.garment)
    emb = load_embedding(_require(args.emb))
    pose = _load_pose(args.pose_file)
    img = _load_cimg_meta(args.img)
    field = sample_at_uv(img, garment.mesh.uv, garment.mesh.chart_id)
    positions = apply_offsets(field, emb, body, pose)
    save_obj(TriMesh(positions, garment.mesh.triangles, garment.mesh.uv,
                     garment.mesh.chart_id), args.out)
    if args.reference:
        ref = _load_target_positions(args.reference, garment.mesh)
        err = np.linalg.norm(positions - ref, axis=1)
        log.info("round trip vs %s: max %.6f cm, mean %.6f cm",
                 args.reference, err.max(), err.mean())
        print("max_vertex_error_cm %.9f" % err.max())
        print("mean_vertex_error_cm %.9f" % err.mean())
    log.info("decoded %s -> %s", args.img, args.out)
    _emit_config(args.out, "decode", args)
    return 0


def _schedule_from_args(args):
    weights = LossWeights(pixel_norm=args.loss,
                          lambda_normal=args.lambda_normal,
                          lambda_edge=args.lambda_edge)
    return training.TrainSchedule(epochs=args.epochs,
                                  batch_size=args.batch_size,
                                  learning_rate=args.learning_rate,
                                  seed=args.seed, weights=weights)


def _geom_targets(args, manifest, garment, dataset, plan=None):
    """Per-sample geometry supervision when the lambdas ask for it."""
    if args.lambda_normal == 0.0 and args.lambda_edge == 0.0:
        return None
    body = _load_body(args.body)
    emb = load_embedding(_require(os.path.join(args.dataset,
                                               "embedding.json")))
    geoms = []
    for i in range(len(dataset.features)):
        pose = _dataset_pose(manifest, body, i)
        truth = apply_offsets(OffsetField(dataset.offsets[i],
                                          dataset.frame_mode),
                              emb, body, pose)
        geoms.append(make_geom_target(garment.mesh, emb, body, pose, truth,
                                      plan=plan))
    return geoms


def cmd_train_mlp(args):
    garment = _garment(args.garment)
    manifest = _read_manifest(args.dataset)
    ds = oracle.load_dataset(args.dataset, garment.mesh)
    n, in_dim = ds.features.shape
    hidden = tuple(int(x) for x in args.hidden.split(","))

    if args.head == "pca":
        flat = ds.offsets.reshape(n, -1)
        basis = pca.fit(flat[ds.splits["train"]], args.k)
        targets = pca.project(basis, flat)
        basis_path = args.basis_out or args.out + ".basis"
        pca.save_basis(basis_path, basis)
        model = nn.MlpModel(in_dim, hidden, args.k, head="pca",
                            seed=args.seed)
        geoms = None
    else:
        targets = ds.offsets
        model = nn.MlpModel(in_dim, hidden, ds.offsets[0].size,
                            head="direct", seed=args.seed)
        geoms = _geom_targets(args, manifest, garment, ds)

    data = training.TrainData(ds.features, targets, ds.splits, geoms=geoms)
    model, result = training.train(model, data, _schedule_from_args(args))
    nn.save_model(args.out, model)
    if args.history:
        training.write_history_csv(args.history, result.history)
    log.info("train-mlp: best epoch %d held-out loss %.6g%s",
             result.best_epoch, result.best_reg_loss,
             " (diverged)" if result.diverged else "")
    _emit_config(args.out, "train-mlp", args)
    return 0


def cmd_train_conv(args):
    garment = _garment(args.garment)
    manifest = _read_manifest(args.dataset)
    ds = oracle.load_dataset(args.dataset, garment.mesh)
    uv_windows = tuple(tuple(w) for w in manifest["uv_windows"])
    charts = tuple(manifest["charts"])
    images = [load_cimg(os.path.join(args.dataset, name),
                        uv_windows=uv_windows, charts=charts,
                        frame_mode=manifest["frame_mode"])
              for name in manifest["images"]]

    h, w = images[0].height, images[0].width
    if h % (1 << args.stages) or w % (1 << args.stages):
        raise ValueError("resolution %dx%d not divisible by 2^%d"
                         % (w, h, args.stages))
    model = nn.ConvDecoder(in_dim=ds.features.shape[1],
                           init_hw=(h >> args.stages, w >> args.stages),
                           c0=args.c0, n_stages=args.stages,
                           out_channels=images[0].channels, seed=args.seed)
    plan = BilinearPlan(images[0], garment.mesh)
    geoms = _geom_targets(args, manifest, garment, ds, plan=plan)

    data = training.TrainData(ds.features, images, ds.splits, geoms=geoms)
    model, result = training.train(model, data, _schedule_from_args(args))
    nn.save_model(args.out, model)
    if args.history:
        training.write_history_csv(args.history, result.history)
    log.info("train-conv: %d parameters, best epoch %d held-out loss %.6g%s",
             model.n_params, result.best_epoch, result.best_reg_loss,
             " (diverged)" if result.diverged else "")
    _emit_config(args.out, "train-conv", args)
    return 0


def _predict_offsets(model, feature, basis):
    """Model output -> per-vertex offset values."""
    out = model.forward(feature[None, :], train=False)[0]
    if isinstance(model, nn.MlpModel) and model.head == "pca":
        if basis is None:
            raise ValueError("pca-head model needs --basis")
        return pca.reconstruct(basis, out[None, :])[0].reshape(-1, 3)
    return out.reshape(-1, 3)


def cmd_predict(args):
    garment = _garment(args.garment)
    manifest = _read_manifest(args.dataset)
    ds = oracle.load_dataset(args.dataset, garment.mesh)
    model = nn.load_model(_require(args.model))
    basis = pca.load_basis(_require(args.basis)) if args.basis else None
    feature = ds.features[args.sample]

    if isinstance(model, nn.ConvDecoder):
        out = model.forward(feature[None, :], train=False)[0]
        template = load_cimg(
            os.path.join(args.dataset, manifest["images"][args.sample]),
            uv_windows=tuple(tuple(w) for w in manifest["uv_windows"]),
            charts=tuple(manifest["charts"]),
            frame_mode=manifest["frame_mode"])
        img = template
        img.data[...] = np.moveaxis(out, 0, -1)
    else:
        vals = _predict_offsets(model, feature, basis)
        img = rasterize(OffsetField(vals, ds.frame_mode), garment.mesh,
                        _manifest_resolution(manifest),
                        pad_rings=manifest["pad_rings"])
    _save_cimg_meta(img, args.out)
    log.info("prediction for sample %d -> %s", args.sample, args.out)
    _emit_config(args.out, "predict", args)
    return 0


def cmd_filter_seams(args):
    garment = _garment(args.garment)
    img = _load_cimg_meta(args.img)
    basis = pca.load_basis(_require(args.basis))
    field = sample_at_uv(img, garment.mesh.uv, garment.mesh.chart_id)
    filtered = pca.filter_seams(basis, field, args.k_filter)
    out = rasterize(filtered, garment.mesh, (img.width, img.height),
                    pad_rings=args.pad_rings)
    _save_cimg_meta(out, args.out)
    log.info("seam filter k=%d: %s -> %s", args.k_filter, args.img, args.out)
    _emit_config(args.out, "filter-seams", args)
    return 0


def _edit_op_from_args(args):
    if args.op == "channel-scale":
        return ChannelScale(channel=args.channel, factor=args.factor)
    if args.op == "channel-offset":
        return ChannelOffset(channel=args.channel, delta=args.delta)
    if args.op == "brush":
        cx, cy = (float(x) for x in args.center.split(","))
        return Brush(center=(cx, cy), radius=args.radius, delta=args.delta,
                     channel=args.channel)
    if args.op == "blend":
        region = tuple(int(x) for x in args.region.split(","))
        if len(region) != 4:
            raise ValueError("--region needs x0,y0,w,h")
        return Blend(other=_load_cimg_meta(_require(args.other)),
                     region=region, alpha=args.alpha)
    raise ValueError("unknown edit op %r" % (args.op,))


def cmd_edit_image(args):
    img = _load_cimg_meta(args.img)
    out = edit_image(img, _edit_op_from_args(args))
    _save_cimg_meta(out, args.out)
    log.info("edit %s: %s -> %s", args.op, args.img, args.out)
    _emit_config(args.out, "edit-image", args)
    return 0


def cmd_export(args):
    img = _load_cimg_meta(args.img)
    export_png(img, args.out)
    log.info("preview %s -> %s (+.json sidecar)", args.img, args.out)
    _emit_config(args.out, "export", args)
    return 0


def cmd_eval(args):
    garment = _garment(args.garment)
    manifest = _read_manifest(args.dataset)
    ds = oracle.load_dataset(args.dataset, garment.mesh)
    model = nn.load_model(_require(args.model))
    basis = pca.load_basis(_require(args.basis)) if args.basis else None
    body = _load_body(args.body)
    emb = load_embedding(_require(os.path.join(args.dataset,
                                               "embedding.json")))

    os.makedirs(args.out, exist_ok=True)
    rows = []
    heat = np.zeros((garment.mesh.n_vertices, 3))
    n_heat = 0
    for split in oracle.SPLIT_NAMES:
        idx = ds.splits[split]
        verr = 0.0
        nerr = 0.0
        for i in idx:
            pred = _predict_offsets(model, ds.features[i], basis)
            pose = _dataset_pose(manifest, body, i)
            truth_field = OffsetField(ds.offsets[i], ds.frame_mode)
            pred_pos = apply_offsets(OffsetField(pred, ds.frame_mode),
                                     emb, body, pose)
            true_pos = apply_offsets(truth_field, emb, body, pose)
            per_vertex = np.linalg.norm(pred_pos - true_pos, axis=1)
            verr += per_vertex.mean()
            gt_n, _ = vertex_unit_normals(true_pos, garment.mesh.triangles)
            ln, _, _ = normal_term(pred_pos, garment.mesh.triangles, gt_n)
            nerr += ln
            if split == "test":
                heat[:, 0] += per_vertex
                n_heat += 1
        rows.append({"split": split, "n": len(idx),
                     "vertex_err_cm": verr / len(idx),
                     "normal_err": nerr / len(idx)})

    with open(os.path.join(args.out, "report.csv"), "w",
              encoding="utf-8") as fh:
        fh.write("split,n,vertex_err_cm,normal_err\n")
        for r in rows:
            fh.write("%s,%d,%.9f,%.9f\n"
                     % (r["split"], r["n"], r["vertex_err_cm"],
                        r["normal_err"]))
            log.info("%-14s n=%-5d vertex %.4f cm  normal %.6f",
                     r["split"], r["n"], r["vertex_err_cm"], r["normal_err"])

    heat[:, 0] /= max(n_heat, 1)
    heat_img = rasterize(OffsetField(heat, ds.frame_mode), garment.mesh,
                         _manifest_resolution(manifest),
                         pad_rings=manifest["pad_rings"])
    _save_cimg_meta(heat_img, os.path.join(args.out, "heat.cimg"))
    export_png(heat_img, os.path.join(args.out, "heat.png"))
    _emit_config(args.out, "eval", args)
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_train_flags(sp):
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--garment", default="tee")
    sp.add_argument("--epochs", type=int, default=50)
    sp.add_argument("--batch-size", type=int, default=16)
    sp.add_argument("--learning-rate", type=float, default=1e-3)
    sp.add_argument("--loss", choices=("l1", "l2"), default="l2")
    sp.add_argument("--lambda-normal", type=float, default=0.0)
    sp.add_argument("--lambda-edge", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--body", default=None)
    sp.add_argument("--history", default=None)
    sp.add_argument("--out", required=True)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="clothpix",
        description="pose-driven cloth offset images: generation, training, "
                    "editing, evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen-body", help="build the procedural body")
    sp.add_argument("--out", required=True)
    sp.add_argument("--thickness-scale", type=float, default=1.0)
    sp.add_argument("--corrupt", choices=CORRUPT_MODES, default=None)
    sp.add_argument("--obj", default=None)
    sp.set_defaults(func=cmd_gen_body)

    sp = sub.add_parser("embed", help="wrap a garment and pin its vertices")
    sp.add_argument("--body", default=None)
    sp.add_argument("--garment", default="tee")
    sp.add_argument("--frame-mode", choices=("local-tbn", "root-frame"),
                    default="local-tbn")
    sp.add_argument("--wrapped-obj", default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("gen-dataset", help="synthesize a pose->offset set")
    sp.add_argument("--body", default=None)
    sp.add_argument("--garment", default="tee")
    sp.add_argument("--frame-mode", choices=("local-tbn", "root-frame"),
                    default="local-tbn")
    sp.add_argument("--n", type=int, default=2000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--oracle-seed", type=int, default=0)
    sp.add_argument("--resolution", type=_resolution_arg, default=64)
    sp.add_argument("--pad-rings", type=int, default=4)
    sp.add_argument("--feature-joints", default=None,
                    help="comma-separated joint names for short features")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_dataset)

    sp = sub.add_parser("encode", help="target OBJ -> offset raster")
    sp.add_argument("--body", default=None)
    sp.add_argument("--garment", default="tee")
    sp.add_argument("--emb", required=True)
    sp.add_argument("--pose-file", required=True)
    sp.add_argument("--obj", required=True)
    sp.add_argument("--resolution", type=_resolution_arg, default=64)
    sp.add_argument("--pad-rings", type=int, default=4)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("decode", help="offset raster -> posed OBJ")
    sp.add_argument("--body", default=None)
    sp.add_argument("--garment", default="tee")
    sp.add_argument("--emb", required=True)
    sp.add_argument("--pose-file", required=True)
    sp.add_argument("--img", required=True)
    sp.add_argument("--reference", default=None,
                    help="OBJ to compare against; prints the error")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("train-mlp", help="fully connected regressor")
    _add_train_flags(sp)
    sp.add_argument("--head", choices=("direct", "pca"), default="direct")
    sp.add_argument("--k", type=int, default=128)
    sp.add_argument("--hidden", default="256,256")
    sp.add_argument("--basis-out", default=None)
    sp.set_defaults(func=cmd_train_mlp)

    sp = sub.add_parser("train-conv", help="transpose-convolution decoder")
    _add_train_flags(sp)
    sp.add_argument("--c0", type=int, default=64)
    sp.add_argument("--stages", type=int, default=3)
    sp.set_defaults(func=cmd_train_conv)

    sp = sub.add_parser("predict", help="run a model on a dataset sample")
    sp.add_argument("--model", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--garment", default="tee")
    sp.add_argument("--sample", type=int, required=True)
    sp.add_argument("--basis", default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("filter-seams", help="project a raster onto a "
                                             "truncated offset subspace")
    sp.add_argument("--img", required=True)
    sp.add_argument("--garment", default="tee")
    sp.add_argument("--basis", required=True)
    sp.add_argument("--k-filter", type=int, required=True)
    sp.add_argument("--pad-rings", type=int, default=4)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_filter_seams)

    sp = sub.add_parser("edit-image", help="apply one raster edit op")
    sp.add_argument("--img", required=True)
    sp.add_argument("--op", required=True,
                    choices=("channel-scale", "channel-offset", "brush",
                             "blend"))
    sp.add_argument("--channel", type=int, default=0)
    sp.add_argument("--factor", type=float, default=1.0)
    sp.add_argument("--delta", type=float, default=0.0)
    sp.add_argument("--center", default="0,0")
    sp.add_argument("--radius", type=float, default=1.0)
    sp.add_argument("--other", default=None)
    sp.add_argument("--region", default=None)
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_edit_image)

    sp = sub.add_parser("export", help=".cimg -> 8-bit PNG preview")
    sp.add_argument("--img", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export)

    sp = sub.add_parser("eval", help="per-split error report + heat map")
    sp.add_argument("--model", required=True)
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--garment", default="tee")
    sp.add_argument("--basis", default=None)
    sp.add_argument("--body", default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    return parser


def main(argv=None):
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
