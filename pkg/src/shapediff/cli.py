"""Command-line pipeline driver.

Subcommands: precompute | train-sign | gen-dataset | train-ddpm | infer |
evaluate.  Each is deterministic given (config, seed) and exits with
0 = success, 1 = validation error, 2 = runtime error, 3 = partial failure.
"""

import argparse
import os
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import diffusion, evaluation, synth
from .config import PipelineConfig, load_config
from .errors import ConfigurationError, ShapeDiffError
from .fmaps import (FunctionalMap, PointMap, compose_via_template,
                    load_pointmap, pointmap_from_fmap, save_pointmap, zoomout)
from .mesh import cotan_laplacian, load_mesh, vertex_area_matrix
from .selection import CandidateSet, dirichlet_energy, select_medoid
from .sign_correction import (correct_signs, extract_features,
                              init_feature_extractor)
from .sign_correction import load_checkpoint as load_sign_checkpoint
from .sign_correction import save_checkpoint as save_sign_checkpoint
from .sign_correction import save_loss_csv, train_sign_corrector
from .spectral import MAX_N, eigenbasis, load_basis, save_basis

MESH_EXTENSIONS = (".off", ".obj", ".ply")


def _family_config(cfg):
    return synth.ShapeFamilyConfig(
        deform_modes=cfg.deform_modes,
        amplitude=cfg.amplitude,
        decimate_fraction_range=(cfg.decimate_min, cfg.decimate_max),
        aniso_probability=cfg.aniso_probability,
    )


def _mesh_files(shapes_dir):
    if not os.path.isdir(shapes_dir):
        raise ConfigurationError(f"shapes_dir {shapes_dir!r} is not a directory")
    names = sorted(
        f for f in os.listdir(shapes_dir) if f.lower().endswith(MESH_EXTENSIONS)
    )
    return [os.path.join(shapes_dir, f) for f in names]


def _find_mesh(shapes_dir, stem):
    for ext in MESH_EXTENSIONS:
        path = os.path.join(shapes_dir, stem + ext)
        if os.path.exists(path):
            return path
    raise ConfigurationError(f"no mesh named {stem!r} in {shapes_dir}")


def _cache_paths(cfg, stem):
    base = os.path.join(cfg.cache_dir, stem)
    return base + ".basis", base + ".hat.basis", base + ".y.npy"


def _shape_seed(cfg, stem):
    return [cfg.seed, zlib.crc32(stem.encode())]


def cmd_precompute(cfg, log=print):
    """Cache eigenbases (and sign-corrected bases + conditioning when a
    sign checkpoint is configured) for every mesh in shapes_dir."""
    os.makedirs(cfg.cache_dir, exist_ok=True)
    sign_params = None
    if cfg.sign_checkpoint:
        sign_params = load_sign_checkpoint(cfg.sign_checkpoint)
    files = _mesh_files(cfg.shapes_dir)
    done = skipped = failed = 0
    for path in files:
        stem = os.path.splitext(os.path.basename(path))[0]
        basis_path, hat_path, y_path = _cache_paths(cfg, stem)
        want = [basis_path] + ([hat_path, y_path] if sign_params else [])
        if all(os.path.exists(p) for p in want):
            skipped += 1
            continue
        try:
            mesh = load_mesh(path)
            k = min(max(cfg.zoomout_target, cfg.n), mesh.num_vertices - 2, MAX_N)
            L = cotan_laplacian(mesh)
            A = vertex_area_matrix(mesh)
            basis = eigenbasis(L, A, k, seed=cfg.seed, mesh_id=stem)
            if sign_params is not None:
                sigma = extract_features(sign_params, mesh, basis.truncated(cfg.n))
                hat, sv = correct_signs(sigma, basis.truncated(cfg.n))
                # the cached refinement basis must share the corrected signs
                # on its first n columns, or maps expressed against the
                # corrected basis are meaningless during refinement
                signs = np.ones(basis.n)
                signs[:cfg.n] = sv.signs
                basis = basis.with_signs(signs)
                save_basis(hat_path, hat)
                np.save(y_path, diffusion.build_conditioning(sigma, basis.area, hat))
            save_basis(basis_path, basis)
            done += 1
        except Exception as exc:  # noqa: BLE001 - per-file error contract
            failed += 1
            log(f"precompute failed for {path}: {exc}")
    log(f"{len(files)} shapes: {done} computed, {skipped} up to date, "
        f"{failed} failed")
    return 3 if failed else 0


def cmd_train_sign(cfg, log=print):
    """Train the sign-correction feature extractor on a synthetic family."""
    if not cfg.template:
        raise ConfigurationError("train-sign requires a template mesh path")
    os.makedirs(cfg.out_dir, exist_ok=True)
    template = load_mesh(cfg.template)
    fam = _family_config(cfg)
    L = cotan_laplacian(template)
    A = vertex_area_matrix(template)
    deform_basis = eigenbasis(L, A, max(fam.deform_modes + 1, 16), seed=0,
                              mesh_id="template-deform")
    shapes = [(template, eigenbasis(L, A, cfg.n, seed=0, mesh_id="template"))]
    for i in range(cfg.sign_shapes - 1):
        pair = synth.make_shape(template, deform_basis, i, cfg.seed, fam)
        basis = eigenbasis(cotan_laplacian(pair.shape),
                           vertex_area_matrix(pair.shape),
                           cfg.n, seed=i + 1, mesh_id=f"sign-train-{i:04d}")
        shapes.append((pair.shape, basis))
        if (i + 1) % 25 == 0:
            log(f"prepared {i + 1}/{cfg.sign_shapes - 1} training shapes")
    params = init_feature_extractor(cfg.n, seed=cfg.seed, p=cfg.descriptor_count)
    params, trace = train_sign_corrector(params, shapes, cfg.sign_iterations,
                                         seed=cfg.seed, lr=cfg.sign_lr,
                                         momentum=cfg.sign_momentum)
    ckpt = cfg.sign_checkpoint or os.path.join(cfg.out_dir, "sign.ckpt")
    save_sign_checkpoint(ckpt, params)
    save_loss_csv(os.path.join(cfg.out_dir, "sign_loss.csv"), trace)
    log(f"final loss {trace[-1]:.6f} -> {ckpt}")
    return 0


def cmd_gen_dataset(cfg, log=print):
    """Generate the (functional map, conditioning) training shards."""
    if not cfg.template:
        raise ConfigurationError("gen-dataset requires a template mesh path")
    if not cfg.sign_checkpoint:
        raise ConfigurationError("gen-dataset requires a trained sign checkpoint")
    if not cfg.shards_dir:
        raise ConfigurationError("gen-dataset requires shards_dir")
    template = load_mesh(cfg.template)
    params = load_sign_checkpoint(cfg.sign_checkpoint)
    manifest = synth.gen_fmap_dataset(
        cfg.dataset_size, template, params, cfg.n, cfg.seed, _family_config(cfg),
        cfg.shards_dir, shard_size=cfg.shard_size, log=log)
    log(f"{manifest['completed']}/{manifest['requested']} records, "
        f"{len(manifest['skipped'])} skipped")
    return 0


def cmd_train_ddpm(cfg, log=print):
    """Train the denoiser on the generated shards."""
    if not cfg.shards_dir:
        raise ConfigurationError("train-ddpm requires shards_dir")
    os.makedirs(cfg.out_dir, exist_ok=True)
    records, _ = synth.load_dataset(cfg.shards_dir)
    if not records:
        raise ConfigurationError("dataset is empty")
    schedule = diffusion.make_schedule(cfg.ddpm_T, cfg.beta_start, cfg.beta_end)
    params = diffusion.init_denoiser(cfg.n, seed=cfg.seed)
    params, trace = diffusion.train_ddpm(
        params, records, schedule, cfg.ddpm_epochs, cfg.ddpm_batch,
        seed=cfg.seed, lr=cfg.ddpm_lr, normalize=True,
        callback=lambda s, l: log(f"step {s}: loss {l:.4f}"))
    ckpt = cfg.ddpm_checkpoint or os.path.join(cfg.out_dir, "ddpm.ckpt")
    diffusion.save_checkpoint(ckpt, params, schedule)
    save_loss_csv(os.path.join(cfg.out_dir, "ddpm_loss.csv"), trace)
    return 0


def _read_pairs(path):
    pairs = []
    with open(path) as fh:
        for line in fh:
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 2:
                raise ConfigurationError(f"pair lines need two names: {text!r}")
            pairs.append((parts[0], parts[1]))
    return pairs


def _load_shape_data(cfg, stem):
    basis_path, hat_path, y_path = _cache_paths(cfg, stem)
    for p in (basis_path, hat_path, y_path):
        if not os.path.exists(p):
            raise ConfigurationError(
                f"missing cache {p}; run `shapediff precompute` with a sign "
                f"checkpoint first")
    mesh = load_mesh(_find_mesh(cfg.shapes_dir, stem))
    return {
        "mesh": mesh,
        "basis": load_basis(basis_path),
        "hat": load_basis(hat_path),
        "y": np.load(y_path),
        "L": cotan_laplacian(mesh),
    }


def cmd_infer(cfg, pairs_path, log=print):
    """Sample template-wise maps once per shape, then per pair compose,
    refine with spectral upsampling, and select the medoid point map."""
    if not cfg.ddpm_checkpoint:
        raise ConfigurationError("infer requires a trained diffusion checkpoint")
    pairs = _read_pairs(pairs_path)
    if not pairs:
        log("0 pairs")
        return 0
    os.makedirs(cfg.out_dir, exist_ok=True)
    params, schedule = diffusion.load_checkpoint(cfg.ddpm_checkpoint)
    if params.n != cfg.n:
        raise ConfigurationError(
            f"checkpoint was trained for n={params.n}, config has n={cfg.n}")

    shapes = {}
    for stem in sorted({s for pair in pairs for s in pair}):
        data = _load_shape_data(cfg, stem)
        # one denoising run per shape, reused across every pair it appears in
        data["cands"] = diffusion.sample(params, data["y"], schedule,
                                         seed=_shape_seed(cfg, stem),
                                         count=cfg.candidates)
        shapes[stem] = data
        log(f"sampled {cfg.candidates} template maps for {stem}")

    def run_pair(pair):
        a, b = pair
        d1, d2 = shapes[a], shapes[b]
        maps = []
        for j in range(cfg.candidates):
            c1t = FunctionalMap(d1["cands"][j], a, "template")
            c2t = FunctionalMap(d2["cands"][j], b, "template")
            c12 = compose_via_template(c1t, c2t)
            c12 = zoomout(c12, d1["basis"], d2["basis"],
                          min(cfg.zoomout_target, d1["basis"].n, d2["basis"].n),
                          step=cfg.zoomout_step)
            maps.append(pointmap_from_fmap(c12, d1["basis"], d2["basis"]))
        cands = CandidateSet(
            maps,
            np.array([dirichlet_energy(pi, d1["mesh"], d2["mesh"], d2["L"])
                      for pi in maps]),
        )
        fused = select_medoid(cands, k=cfg.medoid_k, mesh1=d1["mesh"])
        out = os.path.join(cfg.out_dir, f"{a}__{b}.map")
        save_pointmap(out, fused)
        return out

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outs = list(pool.map(run_pair, pairs))
    else:
        outs = [run_pair(p) for p in pairs]
    for out in outs:
        log(f"wrote {out}")
    return 0


def cmd_evaluate(cfg, pairs_path, predictions_dir, gt_dir, log=print):
    """Score predicted point maps against ground truth and write the report."""
    pairs = _read_pairs(pairs_path)
    os.makedirs(cfg.out_dir, exist_ok=True)
    scored = []
    failed = []
    for a, b in pairs:
        name = f"{a}__{b}"
        pred_path = os.path.join(predictions_dir, name + ".map")
        gt_path = os.path.join(gt_dir, name + ".map")
        if not os.path.exists(pred_path):
            failed.append({"pair": name, "error": f"missing {pred_path}"})
            continue
        mesh1 = load_mesh(_find_mesh(cfg.shapes_dir, a))
        scored.append((name, load_pointmap(pred_path), load_pointmap(gt_path),
                       mesh1))
    if scored:
        report = evaluation.build_report(scored)
    else:
        report = evaluation.MetricReport(float("nan"), [], [])
    report.per_pair.extend(failed)
    report.to_json(os.path.join(cfg.out_dir, "report.json"))
    report.pck_to_csv(os.path.join(cfg.out_dir, "pck.csv"))
    log(f"mean geodesic error (x100): {report.mean_geodesic_error_x100:.4f} "
        f"over {len(scored)} pairs ({len(failed)} failed)")
    return 3 if failed else 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="shapediff",
        description="diffusion-sampled functional maps for shape correspondence")
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, help="override config seed")
    parser.add_argument("--workers", type=int, help="parallel workers")
    parser.add_argument("--n", type=int, help="spectral basis size")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--config-dump", action="store_true",
                        help="print the effective config and exit")
    sub = parser.add_subparsers(dest="command")
    for name in ("precompute", "train-sign", "gen-dataset", "train-ddpm"):
        sub.add_parser(name)
    p_infer = sub.add_parser("infer")
    p_infer.add_argument("--pairs", required=True, help="file of `src dst` stems")
    p_eval = sub.add_parser("evaluate")
    p_eval.add_argument("--pairs", required=True)
    p_eval.add_argument("--predictions", required=True)
    p_eval.add_argument("--gt", required=True)
    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, overrides={
            "seed": args.seed, "workers": args.workers, "n": args.n,
            "out_dir": args.out,
        })
        if args.config_dump:
            sys.stdout.write(cfg.dump())
            return 0
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        if args.command == "precompute":
            return cmd_precompute(cfg)
        if args.command == "train-sign":
            return cmd_train_sign(cfg)
        if args.command == "gen-dataset":
            return cmd_gen_dataset(cfg)
        if args.command == "train-ddpm":
            return cmd_train_ddpm(cfg)
        if args.command == "infer":
            return cmd_infer(cfg, args.pairs)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.pairs, args.predictions, args.gt)
        return 1
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ShapeDiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def console_main():
    raise SystemExit(main())
