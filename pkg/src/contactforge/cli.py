"""Single command-line entry point for the contact pipeline.

Subcommands: label, synth, stats, sample, train, eval, ablate,
export-heatmap, compare-losses. Exit codes: 0 success, 1 usage error,
2 data error. All outputs are written atomically.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import dataset as ds
from . import labeling, mesh, sampling
from . import training as tr
from .losses import LossWeights
from .util import atomic_write_text


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 instead of argparse's default 2
        raise UsageError(message)


def _fmt(x: float) -> str:
    return "nan" if not np.isfinite(x) else f"{x:.6f}"


def _require_files(*paths: str) -> None:
    for p in paths:
        if not os.path.isfile(p):
            raise FileNotFoundError(f"input file not found: {p}")


def _require_out_dir(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise FileNotFoundError(f"output directory not found: {parent}")


def _rows_to_csv(header: list[str], rows: list[list]) -> str:
    lines = [",".join(header)]
    lines += [",".join(str(c) for c in row) for row in rows]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_label(args) -> int:
    _require_files(args.hand, args.other)
    _require_out_dir(args.out)
    if args.threshold is not None:
        profile = labeling.ThresholdProfile("custom", args.threshold)
    else:
        profile = labeling.profile_by_name(args.profile)
    hand_verts, _ = mesh.load_obj(args.hand)
    other_verts, other_tris = mesh.load_obj(args.other)
    labels = labeling.label_contacts(hand_verts, other_verts, other_tris, profile)
    rows = [[i, int(c)] for i, c in enumerate(labels)]
    atomic_write_text(args.out, _rows_to_csv(["vertex_index", "contact"], rows))
    if args.verbose:
        print(
            f"labeled {len(labels)} vertices, {int(labels.sum())} in contact "
            f"(threshold {profile.threshold} m)",
            file=sys.stderr,
        )
    return 0


def _cmd_synth(args) -> int:
    _require_out_dir(args.out)
    config = ds.SyntheticConfig(
        subdivisions=args.subdivisions,
        n_samples=args.samples,
        feature_dim=args.features,
        empty_fraction=args.empty_fraction,
        tip_boost=args.tip_boost,
        seed=args.seed,
    )
    data = ds.generate_synthetic(config)
    ds.save_manifest(data, args.out)
    return 0


def _cmd_stats(args) -> int:
    _require_files(args.manifest)
    data = ds.load_manifest(args.manifest)
    ratio = data.imbalance_ratio
    print(f"N={data.n_samples}")
    print(f"V={data.vertex_count}")
    print(f"d={data.feature_dim}")
    print(f"imbalance_ratio={'inf' if not np.isfinite(ratio) else _fmt(ratio)}")
    sub = mesh.subdivisions_for_vertex_count(data.vertex_count)
    if sub is not None:
        proxy = mesh.make_proxy_mesh(sub)
        print(f"tip_mean={_fmt(float(data.contact_mean[proxy.tip].mean()))}")
        print(f"dorsal_mean={_fmt(float(data.contact_mean[proxy.dorsal].mean()))}")
    return 0


def _cmd_sample(args) -> int:
    _require_files(args.manifest)
    _require_out_dir(args.out)
    data = ds.load_manifest(args.manifest)
    plan = sampling.plan_for_dataset(
        data, k=args.bins, curvature=args.curvature, total=args.total, seed=args.seed
    )
    sampling.save_plan_csv(plan, args.out)
    if args.verbose:
        occupancy = ",".join(str(len(b)) for b in plan.bins)
        print(f"bins: {occupancy}; stream length {len(plan.resampled)}", file=sys.stderr)
    return 0


def _load_mesh_context(data: ds.ContactDataset):
    sub = mesh.subdivisions_for_vertex_count(data.vertex_count)
    if sub is None:
        raise ValueError(
            f"vertex count {data.vertex_count} does not match a proxy mesh; "
            "training requires proxy-mesh datasets"
        )
    proxy = mesh.make_proxy_mesh(sub)
    sizes = [data.vertex_count]
    for s in (84, 21):
        if s < sizes[-1]:
            sizes.append(s)
    regressors = mesh.build_level_regressors(proxy.topology, sizes)
    return proxy, regressors


def _cmd_train(args) -> int:
    _require_files(args.manifest, args.plan)
    _require_out_dir(args.out)
    data = ds.load_manifest(args.manifest)
    proxy, regressors = _load_mesh_context(data)
    indices = sampling.load_plan_indices(args.plan)
    plan = sampling.SamplingPlan(
        scores=np.zeros(data.n_samples),
        edges=np.array([0.0, 0.0]),
        curvature=0.0,
        bins=(np.arange(data.n_samples),),
        resampled=indices,
        seed=args.seed,
    )
    try:
        w_contact, w_reg, w_smooth = (float(w) for w in args.weights.split(","))
    except ValueError:
        raise ValueError(
            f"--weights must be three comma-separated numbers, got {args.weights!r}"
        ) from None
    config = tr.TrainConfig(
        init_mode=args.init,
        steps=args.steps,
        step_size=args.lr,
        seed=args.seed,
        loss=args.loss,
        beta=args.beta,
        gamma=args.gamma,
        weights=LossWeights(w_contact, w_reg, w_smooth),
    )
    head = tr.make_head(
        data.vertex_count, data.feature_dim, args.init, contact_mean=data.contact_mean
    )
    result = tr.train(head, data, plan, proxy.topology, regressors, config)
    tr.save_head(result.head, args.out)
    if args.verbose:
        print(
            f"trained {args.steps} steps; loss {result.loss_curve[0]:.6f} -> "
            f"{result.loss_curve[-1]:.6f}",
            file=sys.stderr,
        )
    return 0


def _cmd_eval(args) -> int:
    _require_files(args.model, args.manifest)
    _require_out_dir(args.out)
    data = ds.load_manifest(args.manifest)
    head = tr.load_head(args.model)
    if head.feature_dim != data.feature_dim or head.vertex_count != data.vertex_count:
        raise ValueError(
            f"model shape ({head.vertex_count}, {head.feature_dim}) does not match "
            f"manifest ({data.vertex_count}, {data.feature_dim})"
        )
    probs = tr.predict_batch(head, data.feature_matrix())
    preds = (probs >= args.threshold).astype(np.int64)
    report = tr.evaluate(preds, data.contact_matrix().astype(np.int64), args.average)
    header = ["precision", "recall", "f1", "evaluated_count", "skipped_count"]
    row = [
        _fmt(report.precision),
        _fmt(report.recall),
        _fmt(report.f1),
        report.evaluated_count,
        report.skipped_count,
    ]
    atomic_write_text(args.out, _rows_to_csv(header, [row]))
    return 0


def _cmd_ablate(args) -> int:
    _require_files(args.manifest)
    _require_out_dir(args.out)
    data = ds.load_manifest(args.manifest)
    proxy, regressors = _load_mesh_context(data)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise ValueError("need at least one seed")
    rows = tr.run_ablation(
        data,
        proxy.topology,
        regressors,
        seeds=seeds,
        steps=args.steps,
        step_size=args.lr,
        bins=args.bins,
        curvature=args.curvature,
        beta=args.beta,
        gamma=args.gamma,
    )
    header = [
        "variant", "loss", "sampling", "init", "seed",
        "precision", "recall", "f1", "evaluated_count", "skipped_count",
    ]
    table = [
        [
            r["variant"], r["loss"], r["sampling"], r["init"], r["seed"],
            _fmt(r["precision"]), _fmt(r["recall"]), _fmt(r["f1"]),
            r["evaluated_count"], r["skipped_count"],
        ]
        for r in rows
    ]
    atomic_write_text(args.out, _rows_to_csv(header, table))
    return 0


def _cmd_export_heatmap(args) -> int:
    _require_files(args.manifest)
    _require_out_dir(args.out)
    data = ds.load_manifest(args.manifest)
    if args.model:
        _require_files(args.model)
        head = tr.load_head(args.model)
        probs = tr.predict_batch(head, data.feature_matrix())
        values = probs.mean(axis=0)
    else:
        values = data.contact_mean
    atomic_write_text(args.out, ds.heatmap_csv(values))
    return 0


def _cmd_compare_losses(args) -> int:
    _require_files(args.manifest)
    _require_out_dir(args.out)
    data = ds.load_manifest(args.manifest)
    proxy, regressors = _load_mesh_context(data)
    losses = [name.strip() for name in args.losses.split(",") if name.strip()]
    variants = tuple(tr.Variant(name, name, True, "learned") for name in losses)
    rows = tr.run_ablation(
        data,
        proxy.topology,
        regressors,
        variants=variants,
        seeds=[args.seed],
        steps=args.steps,
        step_size=args.lr,
        bins=args.bins,
        curvature=args.curvature,
        beta=args.beta,
        gamma=args.gamma,
    )
    header = ["loss", "precision", "recall", "f1", "evaluated_count", "skipped_count"]
    table = [
        [r["loss"], _fmt(r["precision"]), _fmt(r["recall"]), _fmt(r["f1"]),
         r["evaluated_count"], r["skipped_count"]]
        for r in rows
        if r["seed"] != "mean"
    ]
    atomic_write_text(args.out, _rows_to_csv(header, table))
    return 0


# ---------------------------------------------------------------------------
# Parser and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(
        prog="contactforge",
        description="Dense mesh-contact labeling, balanced sampling, "
        "class-balanced training, and evaluation.",
    )
    parser.add_argument("--verbose", action="store_true", help="progress on stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("label", help="contact labels from two OBJ meshes")
    p.add_argument("--hand", required=True)
    p.add_argument("--other", required=True)
    p.add_argument("--profile", default="default", choices=sorted(labeling.PROFILES))
    p.add_argument("--threshold", type=float, default=None,
                   help="override threshold in meters")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_label)

    p = sub.add_parser("synth", help="generate the synthetic benchmark manifest")
    p.add_argument("--subdivisions", type=int, default=2)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--features", type=int, default=16)
    p.add_argument("--empty-fraction", type=float, default=0.7)
    p.add_argument("--tip-boost", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("sample", help="build a balanced sampling plan")
    p.add_argument("--manifest", required=True)
    p.add_argument("--bins", type=int, default=sampling.DEFAULT_BINS)
    p.add_argument("--curvature", type=float, default=sampling.DEFAULT_CURVATURE)
    p.add_argument("--total", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("train", help="train the contact head over a plan")
    p.add_argument("--manifest", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--loss", default="vcb", choices=["bce", "focal", "cb", "vcb"])
    p.add_argument("--beta", type=float, default=0.9999)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--init", default="learned", choices=list(tr.INIT_MODES))
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=tr.ABLATION_STEP_SIZE)
    p.add_argument("--weights", default="1,0.1,1",
                   help="contact,reg,smooth loss weights")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained head on a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--threshold", type=float, default=tr.DEFAULT_THRESHOLD)
    p.add_argument("--average", default="per_sample", choices=["per_sample", "micro"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="sampling/loss/init ablation table")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seeds", default="1", help="comma-separated seeds")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=tr.ABLATION_STEP_SIZE)
    p.add_argument("--bins", type=int, default=sampling.DEFAULT_BINS)
    p.add_argument("--curvature", type=float, default=sampling.DEFAULT_CURVATURE)
    p.add_argument("--beta", type=float, default=tr.ABLATION_BETA)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("export-heatmap", help="per-vertex mean contact CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", default=None,
                   help="export mean predicted contact instead of label mean")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_heatmap)

    p = sub.add_parser("compare-losses", help="loss comparison grid")
    p.add_argument("--manifest", required=True)
    p.add_argument("--losses", default="bce,focal,cb,vcb")
    p.add_argument("--beta", type=float, default=tr.ABLATION_BETA)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=tr.ABLATION_STEP_SIZE)
    p.add_argument("--bins", type=int, default=sampling.DEFAULT_BINS)
    p.add_argument("--curvature", type=float, default=sampling.DEFAULT_CURVATURE)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_compare_losses)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # --help paths
        return int(exc.code or 0)
    if getattr(args, "command", None) is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
