"""Command-line interface: phantom | fuse | build | apply | eval.

Every command is reproducible (identical flags and seeds give bit-identical
data outputs) and leaves a run manifest recording its inputs, configuration,
output paths, and timing. Exit codes: 0 success, 1 runtime failure, 2 usage
error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from . import __version__
from .apclust import ApConfig, cluster_region, single_cluster_result
from .applier import personalize
from .dictionary import build_dictionary, load_dictionary, save_dictionary
from .errors import DpatlasError, GridMismatch, InsufficientPairs
from .fusion import majority_vote
from .metrics import evaluate_atlas, wilcoxon_signed_rank
from .phantom import (
    PhantomConfig,
    generate_population,
    load_population,
    save_population,
    split_population,
)
from .report import render_report
from .shape import CorrespondenceConfig, extract_mean_vertices, propagate_vertices
from .volio import read_volume, write_volume


def _hash_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_input(path) -> str:
    path = Path(path)
    if path.is_file():
        return _hash_file(path)
    h = hashlib.sha256()
    for f in sorted(p for p in path.rglob("*") if p.is_file()):
        h.update(str(f.relative_to(path)).encode())
        h.update(bytes.fromhex(_hash_file(f)))
    return h.hexdigest()


class _Run:
    """Collects manifest fields while a command executes."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.config = {
            k: v for k, v in vars(args).items() if k not in ("func", "command")
        }
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.extra: dict = {}
        self._wall = time.perf_counter()
        self._cpu = time.process_time()

    def add_input(self, name: str, path) -> None:
        self.inputs[name] = _hash_input(path)

    def write(self, path: Path) -> None:
        manifest = {
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": sorted(self.outputs),
            "wall_seconds": round(time.perf_counter() - self._wall, 3),
            "cpu_seconds": round(time.process_time() - self._cpu, 3),
            **self.extra,
        }
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")


def _parse_grid(text: str) -> tuple[int, int, int]:
    parts = [p for p in text.replace("x", ",").split(",") if p]
    if len(parts) == 1:
        n = int(parts[0])
        return (n, n, n)
    if len(parts) == 3:
        return tuple(int(p) for p in parts)  # type: ignore[return-value]
    raise ValueError(f"grid must be N or NX,NY,NZ, got {text!r}")


def cmd_phantom(args) -> int:
    cfg = PhantomConfig(
        dims=args.grid,
        num_regions=args.regions,
        phenotypes_per_region=args.phenotypes,
        n_train=args.train,
        n_test=args.test,
        shape_noise=args.shape_noise,
        intensity_noise=args.intensity_noise,
        seed=args.seed,
    )
    run = _Run("phantom", args)
    pop = generate_population(cfg)
    fraction = cfg.n_train / cfg.n_subjects
    train, test = split_population(pop, fraction, cfg.seed)
    out = Path(args.out)
    save_population(train, test, out)
    run.outputs = [str(out)]
    run.write(out / "run_manifest.json")
    print(f"wrote {len(train)} training and {len(test)} testing subjects to {out}")
    return 0


def cmd_fuse(args) -> int:
    run = _Run("fuse", args)
    run.add_input("population", args.pop)
    train, _ = load_population(args.pop)
    mean = majority_vote([s.seg for s in train.subjects])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_volume(mean.volume, out / "mean_seg.vol")
    write_volume(mean.vote_margin, out / "vote_margin.vol")
    run.outputs = [str(out / "mean_seg.vol"), str(out / "vote_margin.vol")]
    run.write(out / "run_manifest.json")
    print(f"fused {len(train)} segmentations into {out}")
    return 0


def _config_hash(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()
    ).hexdigest()


def cmd_build(args) -> int:
    corr_cfg = CorrespondenceConfig(vertices_per_region=args.vertices, seed=args.seed)
    ap_cfg = ApConfig(
        damping=args.damping,
        preference="median-similarity" if args.preference == "median" else float(args.preference),
    )
    run = _Run("build", args)
    run.add_input("population", args.pop)

    train, _ = load_population(args.pop)
    subjects = train.subjects
    if args.limit is not None:
        subjects = subjects[: args.limit]
    segs = [s.seg for s in subjects]
    imgs = [s.img for s in subjects]
    if not segs:
        raise DpatlasError("population has no training subjects")

    mean = majority_vote(segs)
    num_regions = segs[0].num_labels - 1
    clusterings = {}
    for k in range(1, num_regions + 1):
        if args.single_cluster:
            clusterings[k] = single_cluster_result(len(segs), k)
        else:
            mean_vertices = extract_mean_vertices(mean, k, corr_cfg)
            vertex_sets = [
                propagate_vertices(mean_vertices, seg, subject_id=i)
                for i, seg in enumerate(segs)
            ]
            clusterings[k] = cluster_region(vertex_sets, ap_cfg)
        result = clusterings[k]
        print(
            f"region {k}: {result.num_clusters} clusters "
            f"(converged={int(result.converged)})"
        )

    provenance = {
        "training_set": str(args.pop),
        "subjects_used": len(segs),
        "seed": args.seed,
        "config_hash": _config_hash(
            {
                "vertices": args.vertices,
                "damping": args.damping,
                "preference": args.preference,
                "single_cluster": args.single_cluster,
                "limit": args.limit,
                "seed": args.seed,
            }
        ),
    }
    dictionary = build_dictionary(segs, imgs, clusterings, provenance)
    out = Path(args.out)
    save_dictionary(dictionary, out)
    run.outputs = [str(out)]
    run.extra["cluster_counts"] = {
        k: clusterings[k].num_clusters for k in sorted(clusterings)
    }
    run.write(out / "run_manifest.json")
    print(f"dictionary with {num_regions} regions written to {out}")
    return 0


def cmd_apply(args) -> int:
    run = _Run("apply", args)
    run.add_input("dictionary", args.dict)
    run.add_input("subject", args.subject)
    dictionary = load_dictionary(args.dict)
    subject = read_volume(args.subject)
    try:
        result = personalize(subject, dictionary, subject_id=str(args.subject))
    except GridMismatch:
        print(
            f"subject grid {subject.header.dims} @ {subject.header.spacing} does not "
            f"match dictionary grid {dictionary.header.dims} @ "
            f"{dictionary.header.spacing}",
            file=sys.stderr,
        )
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, prob_map in enumerate(result.atlas.maps):
        path = out / f"label_{k:03d}.vol"
        write_volume(prob_map, path)
        run.outputs.append(str(path))
    selections = {
        str(k): {
            "c_max": sel.chosen_cluster,
            "score": sel.score,
            "cluster_scores": sel.cluster_scores,
        }
        for k, sel in result.selections.items()
    }
    with open(out / "selections.json", "w", encoding="utf-8") as fh:
        json.dump(selections, fh, indent=2, sort_keys=True)
        fh.write("\n")
    run.outputs.append(str(out / "selections.json"))
    run.write(out / "run_manifest.json")
    print(f"personalized atlas ({result.atlas.num_labels} maps) written to {out}")
    return 0


def _parse_dicts(text: str) -> dict[str, str]:
    variants = {}
    for item in text.split(","):
        if "=" not in item:
            raise ValueError(f"--dicts items must be name=path, got {item!r}")
        name, path = item.split("=", 1)
        variants[name.strip()] = path.strip()
    if not variants:
        raise ValueError("--dicts needs at least one name=path pair")
    return variants


def cmd_eval(args) -> int:
    run = _Run("eval", args)
    run.add_input("population", args.pop)
    for name, path in args.dicts.items():
        run.add_input(f"dict:{name}", path)

    _, test = load_population(args.pop)
    if not test.subjects:
        raise DpatlasError("population has no test subjects")

    reports = []
    means: dict[str, dict[str, list[float]]] = {"js": {}, "dice": {}}
    for name in sorted(args.dicts):
        dictionary = load_dictionary(args.dicts[name])
        js_list, dice_list = [], []
        for subj in test.subjects:
            atlas = personalize(subj.img, dictionary, subject_id=str(subj.subject_id))
            rep = evaluate_atlas(
                atlas.atlas, subj.seg, subject=f"{subj.subject_id:04d}", variant=name
            )
            reports.append(rep)
            js_list.append(rep.mean_js)
            dice_list.append(rep.mean_dice)
        means["js"][name] = js_list
        means["dice"][name] = dice_list
        print(
            f"variant {name}: mean JS {sum(js_list) / len(js_list):.4f}, "
            f"mean Dice {sum(dice_list) / len(dice_list):.4f}"
        )

    wilcoxon: dict[str, object] = {}
    names = sorted(args.dicts)
    for metric in ("js", "dice"):
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                key = f"{metric}:{a}-vs-{b}"
                if len(test.subjects) < 6:
                    wilcoxon[key] = "skipped (fewer than 6 test subjects)"
                    continue
                try:
                    wilcoxon[key] = wilcoxon_signed_rank(
                        means[metric][a], means[metric][b], alpha=args.alpha
                    )
                except InsufficientPairs as exc:
                    wilcoxon[key] = f"skipped ({exc})"

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    paths = render_report(reports, wilcoxon, out)
    run.outputs = [str(p) for p in paths]
    run.write(Path(f"{out.with_suffix('')}_manifest.json"))
    for key in sorted(wilcoxon):
        value = wilcoxon[key]
        line = value.to_line() if hasattr(value, "to_line") else value
        print(f"{key} {line}")
    print(f"report written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpatlas",
        description="Per-region probabilistic atlas dictionaries: synthesize "
        "populations, build dictionaries, personalize atlases, evaluate.",
    )
    parser.add_argument("--version", action="version", version=f"dpatlas {__version__}")
    parser.add_argument(
        "--threads",
        type=int,
        default=1,
        metavar="N",
        help="worker hint recorded in the manifest; results are identical at any value",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic phantom population")
    p.add_argument("--grid", type=_parse_grid, default=(48, 48, 48), metavar="N[,N,N]")
    p.add_argument("--regions", type=int, default=8)
    p.add_argument("--phenotypes", type=int, default=3)
    p.add_argument("--train", type=int, default=60, metavar="N")
    p.add_argument("--test", type=int, default=20, metavar="N")
    p.add_argument("--shape-noise", type=float, default=0.4)
    p.add_argument("--intensity-noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="population output directory")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("fuse", help="majority-vote fuse the training segmentations")
    p.add_argument("--pop", required=True, help="population directory")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("build", help="learn the per-region atlas dictionary")
    p.add_argument("--pop", required=True, help="population directory")
    p.add_argument("--vertices", type=int, default=128, metavar="M")
    p.add_argument("--damping", type=float, default=0.9)
    p.add_argument(
        "--preference",
        default="median",
        help="'median' or a scalar self-similarity",
    )
    p.add_argument(
        "--single-cluster",
        action="store_true",
        help="skip clustering; pooled group-atlas baseline",
    )
    p.add_argument(
        "--limit", type=int, default=None, metavar="N",
        help="use only the first N training subjects",
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="dictionary output directory")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("apply", help="personalize an atlas for one subject image")
    p.add_argument("--dict", required=True, help="dictionary directory")
    p.add_argument("--subject", required=True, help="subject intensity volume")
    p.add_argument("--out", required=True, help="atlas output directory")
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("eval", help="evaluate atlas variants on the test subjects")
    p.add_argument("--pop", required=True, help="population directory")
    p.add_argument(
        "--dicts",
        type=_parse_dicts,
        required=True,
        metavar="NAME=DIR[,NAME=DIR...]",
    )
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--out", required=True, help="CSV report path")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:  # invalid flag values caught at config build
        parser.error(str(exc))
        return 2
    except DpatlasError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
