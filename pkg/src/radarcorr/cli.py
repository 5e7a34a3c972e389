"""Command-line pipeline: gen -> label -> train -> calibrate -> infer -> eval -> plot.

Config files use ``key = value`` lines (``#`` comments); values are parsed as
JSON where possible, so lists are written ``[32, 64]``.

Exit codes: 0 success, 1 unexpected error, 2 usage, 3 missing file,
4 malformed file, 5 format-version mismatch, 6 manifest/model N mismatch,
7 training diverged.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import dataio
from .dataio import FORMAT_VERSION, FormatError, Manifest, VersionError
from .diffcore import CheckpointError
from .evaluation import EvalReport, evaluate, read_report
from .geometry import FovSpec, pad_cloud
from .labelgen import LabelSet, generate_labels
from .matcher import InferenceConfig, calibrate_threshold, candidate_matches, green_scores, select_matches
from .model import ModelConfig
from .synth import SynthConfig, generate_synthetic
from .trainer import TrainConfig, TrainExample, TrainingDiverged, load_model, split_dataset, train

log = logging.getLogger("radarcorr")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_MISSING, EXIT_FORMAT, EXIT_VERSION, EXIT_N, EXIT_DIVERGED = range(8)


class CliError(Exception):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


class NMismatch(CliError):
    def __init__(self, msg):
        super().__init__(msg, EXIT_N)


def read_kv(path) -> dict:
    """Parse a ``key = value`` config file."""
    path = Path(path)
    if not path.exists():
        raise CliError(f"missing file {path}", EXIT_MISSING)
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"expected key = value, got {raw!r}", path, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    if "format_version" in out and out.pop("format_version") != FORMAT_VERSION:
        raise VersionError("unsupported format_version", path)
    return out


def _dataclass_from(cls, values: dict, **overrides):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise FormatError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**{**values, **overrides})


def _fov_from(values: dict) -> FovSpec:
    fov_keys = {f.name for f in fields(FovSpec)}
    deg = {k[:-4]: np.deg2rad(v) for k, v in values.items() if k.endswith("_deg") and k[:-4] in fov_keys}
    return FovSpec(**{**{k: v for k, v in values.items() if k in fov_keys}, **deg})


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise CliError(f"missing file {path}", EXIT_MISSING)
    return path


def _load_dataset(ddir):
    """Manifest plus every scan pair of every listed sequence, with truth when present."""
    ddir = Path(ddir)
    manifest = Manifest.load(_require(ddir / "manifest.json"))
    truth = dataio.read_truth(ddir / "truth.txt") if (ddir / "truth.txt").exists() else {}
    pairs = []
    for seq in manifest.sequences:
        records = dataio.read_sequence(_require(ddir / seq["path"]))
        name = Path(seq["path"]).stem
        for p in dataio.make_pairs(records, name):
            p.truth = truth.get(p.pair_id)
            pairs.append(p)
    return manifest, pairs


def _check_n(manifest, n_model):
    if manifest.n_max != n_model:
        raise NMismatch(f"dataset N={manifest.n_max} but model N={n_model}")


# -- commands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    values = read_kv(args.config) if args.config else {}
    n_sequences = int(values.pop("sequences", 10))
    scans = int(values.pop("scans_per_sequence", 11))
    gate = values.pop("gate", None)
    fov = _fov_from(values)
    values = {k: v for k, v in values.items()
              if k not in {f.name for f in fields(FovSpec)} and not k.endswith("_deg")}
    seed = args.seed if args.seed is not None else int(values.pop("seed", 0))
    values.pop("seed", None)
    base = _dataclass_from(SynthConfig, values, fov=fov, seed=seed)
    gate = 3.0 * base.noise_sigma if gate is None else float(gate)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seq_entries, truth, n_max = [], {}, 0
    for k in range(n_sequences):
        seq = generate_synthetic(replace(base, seed=seed * 100003 + k), scans)
        name = f"seq_{k:03d}"
        dataio.write_sequence(seq.records, out / f"{name}.txt")
        seq_entries.append({"path": f"{name}.txt", "records": len(seq.records)})
        for j, t in enumerate(seq.truth):
            truth[f"{name}:{j}"] = t
        n_max = max(n_max, dataio.dataset_n_max([r.cloud() for r in seq.records]))
    dataio.write_truth(truth, out / "truth.txt")
    Manifest(n_max, fov, gate, seq_entries).save(out / "manifest.json")
    print(f"wrote {n_sequences} sequences ({len(truth)} pairs, N={n_max}) to {out}")
    return EXIT_OK


def cmd_label(args) -> int:
    manifest, pairs = _load_dataset(args.dataset)
    gate = args.gate if args.gate is not None else manifest.gate
    labels = {p.pair_id: generate_labels(p.prev, p.curr, p.pose, gate).labels for p in pairs}
    out = Path(args.out) if args.out else Path(args.dataset) / "labels.txt"
    dataio.write_labels(labels, out, gate)
    n_matched = sum(int((v > 0).sum()) for v in labels.values())
    print(f"labeled {len(labels)} pairs ({n_matched} matched points) at gate {gate} m -> {out}")
    return EXIT_OK


def _examples(manifest, pairs, labels):
    out = []
    for p in pairs:
        lab = labels.get(p.pair_id)
        if lab is None:
            raise FormatError(f"no labels for pair {p.pair_id}; run the label command")
        out.append(TrainExample(pad_cloud(p.prev, manifest.n_max), pad_cloud(p.curr, manifest.n_max),
                                LabelSet(lab, manifest.gate), p.pair_id, p.truth))
    return out


def _inference_config(args, manifest, base: dict | None = None) -> InferenceConfig:
    conf = InferenceConfig(fov=manifest.fov, **(base or {}))
    if getattr(args, "threshold", None) is not None:
        conf = replace(conf, accept_threshold=args.threshold)
    if getattr(args, "score_space", None):
        conf = replace(conf, score_space=args.score_space)
    return conf


def cmd_train(args) -> int:
    manifest, pairs = _load_dataset(args.dataset)
    labels_path = _require(Path(args.labels) if args.labels else Path(args.dataset) / "labels.txt")
    labels, _ = dataio.read_labels(labels_path)
    mvals = read_kv(args.model_conf) if args.model_conf else {}
    mvals.setdefault("n_max", manifest.n_max)
    mconf = _dataclass_from(ModelConfig, mvals)
    _check_n(manifest, mconf.n_max)
    tvals = read_kv(args.train_conf) if args.train_conf else {}
    val_fraction = float(tvals.pop("val_fraction", 0.2))
    if args.seed is not None:
        tvals["seed"] = args.seed
    tconf = _dataclass_from(TrainConfig, tvals)
    examples = _examples(manifest, pairs, labels)
    train_set, val_set = split_dataset(examples, val_fraction, tconf.seed)
    by_id = {p.pair_id: p for p in pairs}
    iconf = _inference_config(args, manifest)

    def validator(net, val):
        rows = []
        for ex in val:
            p = by_id[ex.pair_id]
            ref = p.truth if p.truth is not None else np.array(ex.labels.pairs()).reshape(-1, 2)
            r, c, s = candidate_matches(p.prev, p.curr, net, iconf)
            rows.append((p.pair_id, select_matches(p.prev, p.curr, r, c, s, iconf).matches, ref))
        rep = evaluate({pid: m for pid, m, _ in rows}, {pid: ref for pid, _, ref in rows})
        return rep.pooled()

    out = Path(args.out)
    res = train(train_set, mconf, tconf, val_set, out, validator,
                extra_config={"fov": manifest.fov.as_dict(), "gate": manifest.gate,
                              "val_fraction": val_fraction,
                              "inference": {"accept_threshold": iconf.accept_threshold,
                                            "score_space": iconf.score_space}})
    (out / "loss.csv").write_text("epoch,mean_loss\n" + "".join(
        f"{k},{v!r}\n" for k, v in enumerate(res.losses, start=1)))
    print(f"trained {tconf.epochs} epochs on {len(train_set)} pairs; "
          f"final loss {res.losses[-1]:.5f}; checkpoint {res.checkpoint}")
    return EXIT_OK


def _load_checkpoint(path):
    try:
        return load_model(_require(path))
    except CheckpointError as exc:
        msg = str(exc)
        raise CliError(msg, EXIT_VERSION if "format_version" in msg else EXIT_FORMAT) from None


def _saved_inference(config: dict) -> dict:
    saved = config.get("inference", {})
    return {k: saved[k] for k in ("accept_threshold", "score_space") if k in saved}


def cmd_calibrate(args) -> int:
    manifest, pairs = _load_dataset(args.dataset)
    net, config = _load_checkpoint(args.checkpoint)
    _check_n(manifest, net.config.n_max)
    pairs = [p for p in pairs if p.truth is not None]
    if args.split == "val":
        _, pairs = split_dataset(pairs, config.get("val_fraction", 0.2),
                                 config.get("train", {}).get("seed", 0))
    conf = _inference_config(args, manifest, _saved_inference(config))
    cal = calibrate_threshold(pairs, net, args.target_precision, conf)
    lines = ["threshold,precision,recall,n_predicted"]
    lines += [f"{float(t)!r},{float(p)!r},{float(r)!r},{int(n)}" for t, p, r, n in cal.table]
    Path(args.out).write_text("\n".join(lines) + "\n")
    state = "reached" if cal.attained else "NOT reached"
    print(f"target precision {args.target_precision} {state}; threshold {cal.threshold!r}")
    return EXIT_OK


def cmd_infer(args) -> int:
    manifest, pairs = _load_dataset(args.dataset)
    net, config = _load_checkpoint(args.checkpoint)
    _check_n(manifest, net.config.n_max)
    conf = _inference_config(args, manifest, _saved_inference(config))
    dump = Path(args.dump_affinity) if args.dump_affinity else None
    if dump is not None:
        dump.mkdir(parents=True, exist_ok=True)

    def run(p):
        t0 = time.perf_counter()
        r, c, s = candidate_matches(p.prev, p.curr, net, conf)
        ms = select_matches(p.prev, p.curr, r, c, s, conf)
        elapsed = time.perf_counter() - t0
        if dump is not None:
            _dump_affinity(dump, p, net, conf, r, c, s, ms)
        return dataio.MatchRecord(p.pair_id, p.prev.timestamp, p.curr.timestamp, ms.matches), elapsed

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        results = list(pool.map(run, pairs))  # map keeps input order
    dataio.write_matches([r for r, _ in results], args.out, conf.accept_threshold)
    timing = Path(args.out).with_suffix(".timing.csv")
    timing.write_text("pair_id,seconds\n" + "".join(f"{r.pair_id},{t:.6f}\n" for r, t in results))
    total = sum(len(r.matches) for r, _ in results)
    print(f"{len(results)} pairs, {total} matches -> {args.out}")
    return EXIT_OK


def _dump_affinity(dump, pair, net, conf, rows, cols, scores, ms):
    """Green block plus candidate/accepted matches for one pair, for plotting."""
    ia, ib, green = green_scores(pair.prev, pair.curr, net, conf)
    accepted = ms.pairs()
    status = np.array([(int(i), int(j)) in accepted for i, j in zip(rows, cols)], dtype=bool)
    np.savez(dump / f"{pair.pair_id.replace(':', '_')}.npz", green=green, rows_index=ia,
             cols_index=ib, prev=pair.prev.points, curr=pair.curr.points,
             cand_rows=rows, cand_cols=cols, cand_scores=scores, accepted=status,
             threshold=conf.accept_threshold)


def cmd_eval(args) -> int:
    records, _ = dataio.read_matches(_require(args.matches))
    truth = dataio.read_truth(_require(args.truth))
    runtimes = None
    if args.timing:
        lines = _require(args.timing).read_text().splitlines()[1:]
        runtimes = [float(line.split(",")[1]) for line in lines if line]
    report = evaluate({r.pair_id: r.matches for r in records}, truth, runtimes)
    if args.sweep:
        rows = _require(args.sweep).read_text().splitlines()[1:]
        report.sweep = np.array([[float(v) for v in r.split(",")] for r in rows if r])
    text = report.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    p, r = report.pooled()
    print(f"pairs {len(report.rows)}  mean P {report.mean_precision:.4f}  mean R "
          f"{report.mean_recall:.4f}  pooled P {p:.4f}  pooled R {r:.4f}")
    return EXIT_OK


def cmd_plot(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.affinity_dump:
        d = np.load(_require(args.affinity_dump))
        green = d["green"]
        with open(out / "affinity.csv", "w") as fh:
            fh.write("row,col,prev_index,curr_index,score\n")
            for i in range(green.shape[0]):
                for j in range(green.shape[1]):
                    fh.write(f"{i},{j},{int(d['rows_index'][i])},{int(d['cols_index'][j])},{green[i, j]!r}\n")
        with open(out / "matches_overlay.csv", "w") as fh:
            fh.write("prev_index,curr_index,score,accepted,x_prev,y_prev,z_prev,x_curr,y_curr,z_curr\n")
            for i, j, s, ok in zip(d["cand_rows"], d["cand_cols"], d["cand_scores"], d["accepted"]):
                a, b = d["prev"][i], d["curr"][j]
                fh.write(f"{int(i)},{int(j)},{s!r},{int(ok)},{a[0]!r},{a[1]!r},{a[2]!r},"
                         f"{b[0]!r},{b[1]!r},{b[2]!r}\n")
        written += ["affinity.csv", "matches_overlay.csv"]
        if args.render:
            _render_affinity(d, out / "affinity.png")
            written.append("affinity.png")
    if args.report:
        report = read_report(_require(args.report).read_text())
        with open(out / "per_pair.csv", "w") as fh:
            fh.write("pair_id,precision,recall,f1\n")
            for r in report.rows:
                fh.write(f"{r.pair_id},{r.precision!r},{r.recall!r},{r.f1!r}\n")
        written.append("per_pair.csv")
        if report.sweep is not None:
            np.savetxt(out / "sweep.csv", report.sweep, delimiter=",",
                       header="threshold,precision,recall,n_predicted", comments="")
            written.append("sweep.csv")
        if args.render:
            _render_report(report, out / "report.png")
            written.append("report.png")
    if not written:
        raise CliError("nothing to plot: pass --affinity-dump and/or --report", EXIT_USAGE)
    print("wrote " + ", ".join(str(out / w) for w in written))
    return EXIT_OK


def _render_affinity(d, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 3, figsize=(15, 4.5))
    ax = axes[0]
    im = ax.imshow(d["green"], cmap="viridis", aspect="auto")
    fig.colorbar(im, ax=ax)
    pos_r = {int(v): k for k, v in enumerate(d["rows_index"])}
    pos_c = {int(v): k for k, v in enumerate(d["cols_index"])}
    for n, (i, j, ok) in enumerate(zip(d["cand_rows"], d["cand_cols"], d["accepted"])):
        ax.text(pos_c[int(j)], pos_r[int(i)], str(n) if ok else "x", color="w" if ok else "r",
                ha="center", va="center", fontsize=7)
    ax.set(title="affinity (real-point block)", xlabel="current", ylabel="previous")
    for ax, (u, v, name) in zip(axes[1:], [(0, 1, "xy"), (0, 2, "xz")]):
        n = 0
        for i, j, ok in zip(d["cand_rows"], d["cand_cols"], d["accepted"]):
            if not ok:
                continue
            a, b = d["prev"][i], d["curr"][j]
            ax.plot([a[u], b[u]], [a[v], b[v]], "k-", lw=0.8)
            ax.plot(a[u], a[v], "bo", ms=4)
            ax.plot(b[u], b[v], "rs", ms=4)
            ax.annotate(str(n), (a[u], a[v]), fontsize=7)
            n += 1
        ax.set(title=f"matches ({name} plane)", xlabel=name[0], ylabel=name[1])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _render_report(report: EvalReport, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].hist([[r.precision for r in report.rows], [r.recall for r in report.rows]],
                 bins=20, label=["precision", "recall"])
    axes[0].legend()
    axes[0].set(title="per-pair metrics")
    if report.sweep is not None:
        axes[1].plot(report.sweep[:, 2], report.sweep[:, 1], ".-")
        axes[1].set(xlabel="recall", ylabel="precision", title="threshold sweep")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="radarcorr", description=__doc__.split("\n")[0])
    ap.add_argument("--seed", type=int, default=None, help="override the configured seed")
    ap.add_argument("--threads", type=int, default=1, help="parallel workers for infer")
    ap.add_argument("--format-version", type=int, default=FORMAT_VERSION,
                    help="expected on-disk format version")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--config", help="synthetic generator key = value file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("label", help="derive training labels from poses")
    p.add_argument("--dataset", required=True)
    p.add_argument("--gate", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train the correspondence network")
    p.add_argument("--dataset", required=True)
    p.add_argument("--labels")
    p.add_argument("--model-conf")
    p.add_argument("--train-conf")
    p.add_argument("--threshold", type=float)
    p.add_argument("--score-space", choices=["logit", "softmax"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="choose an acceptance threshold on labelled pairs")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target-precision", type=float, default=0.9)
    p.add_argument("--split", choices=["all", "val"], default="all")
    p.add_argument("--score-space", choices=["logit", "softmax"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("infer", help="match every scan pair of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--score-space", choices=["logit", "softmax"])
    p.add_argument("--dump-affinity", help="directory for per-pair affinity dumps")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score matches against truth")
    p.add_argument("--matches", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--timing")
    p.add_argument("--sweep", help="threshold sweep table from calibrate")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="plot-ready tables (and optional PNGs)")
    p.add_argument("--affinity-dump")
    p.add_argument("--report")
    p.add_argument("--render", action="store_true", help="also render PNGs with matplotlib")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.format_version != FORMAT_VERSION:
            raise VersionError(f"requested format_version {args.format_version}, "
                               f"this build reads {FORMAT_VERSION}")
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except VersionError as exc:
        print(f"version error: {exc}", file=sys.stderr)
        return EXIT_VERSION
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FileNotFoundError as exc:
        print(f"error: missing file {exc.filename}", file=sys.stderr)
        return EXIT_MISSING
    except (ValueError, RuntimeError, OSError) as exc:
        if args.verbose:
            raise
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
