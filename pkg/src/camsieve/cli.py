"""Command-line surface: extract, inspect, synth, train, cv, predict, report."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from bisect import bisect_right
from pathlib import Path

import numpy as np

from . import dataset, features, flows, packets, protocols, synth, tree
from .errors import CamsieveError

DEFAULT_FLOW_TIMEOUT_S = 600.0
DEFAULT_ACTIVITY_THRESHOLD_S = 5.0


def extract_records(
    pcap_path: str | Path,
    label: str = "",
    flow_timeout_us: int = flows.DEFAULT_FLOW_TIMEOUT_US,
    activity_threshold_us: int = features.DEFAULT_ACTIVITY_THRESHOLD_US,
) -> list[dataset.LabeledRecord]:
    """pcap to labeled feature records: decode, sort, assemble, summarize."""
    sorted_packets = packets.read_packets_sorted(pcap_path)
    flow_list = flows.assemble_flows(sorted_packets, flow_timeout_us)
    return [
        dataset.record_from_features(features.compute_features(f, activity_threshold_us), label)
        for f in flow_list
    ]


def matrix_from_records(records: list[dataset.LabeledRecord]) -> tuple[np.ndarray, list[str]]:
    X = np.array([rec.values for rec in records], dtype=np.float64)
    y = [rec.label for rec in records]
    return X, y


def _class_names(y: list[str]) -> list[str]:
    """Declared taxonomy order for known classes, alphabetical for strays."""
    present = set(y)
    ordered = [c for c in dataset.CLASSES if c in present]
    ordered += sorted(present - set(dataset.CLASSES))
    return ordered


def _add_common_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-depth", type=int, default=tree.DEFAULT_MAX_DEPTH)
    p.add_argument("--min-samples-split", type=int, default=tree.DEFAULT_MIN_SAMPLES_SPLIT)
    p.add_argument("--seed", type=int, default=tree.DEFAULT_SEED)
    p.add_argument("--taxonomy", type=Path, default=None,
                   help="JSON file mapping application labels to classes")


def _taxonomy(args) -> dataset.LabelTaxonomy:
    if getattr(args, "taxonomy", None):
        return dataset.LabelTaxonomy.from_json(args.taxonomy)
    return dataset.default_taxonomy()


def _load_clean(path: Path, taxonomy: dataset.LabelTaxonomy) -> tuple[list, int]:
    records = dataset.read_csv(path, taxonomy)
    cleaned, replaced = dataset.clean(records)
    if replaced:
        print(f"cleaned {replaced} non-finite values to 0", file=sys.stderr)
    return cleaned, replaced


def cmd_extract(args) -> int:
    records = extract_records(
        args.pcap,
        label=args.label,
        flow_timeout_us=int(args.flow_timeout * 1e6),
        activity_threshold_us=int(args.activity_threshold * 1e6),
    )
    dataset.write_csv(records, args.output)
    print(f"wrote {len(records)} flows to {args.output}")
    return 0


def cmd_synth(args) -> int:
    profile = synth.SynthProfile(synth.TrafficKind(args.kind), args.count, args.seed)
    entries = synth.generate(profile, args.output, args.manifest)
    print(f"wrote {sum(e['packets'] for e in entries)} packets in "
          f"{len(entries)} {args.kind} flows to {args.output}")
    return 0


def cmd_inspect(args) -> int:
    sorted_packets = packets.read_packets_sorted(args.pcap)
    flow_list = flows.assemble_flows(sorted_packets, int(args.flow_timeout * 1e6))

    # flows sharing a key never overlap in time, so a packet belongs to the
    # last flow of its key that started at or before it
    by_key: dict[flows.FlowKey, tuple[list[int], list[int]]] = {}
    for pos, flow in enumerate(flow_list):
        starts, positions = by_key.setdefault(flow.key, ([], []))
        starts.append(flow.start_ts)
        positions.append(pos)
    payloads: list[list[bytes]] = [[] for _ in flow_list]
    for pkt in sorted_packets:
        starts, positions = by_key[flows.canonical_key(pkt)]
        idx = bisect_right(starts, pkt.timestamp) - 1
        payloads[positions[idx]].append(pkt.payload)

    report = protocols.build_report(
        flow_list, payloads, protocols.AppContext(args.app.upper())
    )
    text = json.dumps(report, indent=2) + "\n" if args.json else protocols.render_report(report)
    if args.output:
        dataset.atomic_write_text(args.output, lambda fh: fh.write(text))
    else:
        sys.stdout.write(text)
    return 0


def cmd_train(args) -> int:
    cleaned, _ = _load_clean(args.csv, _taxonomy(args))
    X, y = matrix_from_records(cleaned)
    class_names = _class_names(y)
    if args.prune_threshold is not None:
        selected, model = tree.prune_features(
            X, y, features.FEATURE_NAMES, threshold=args.prune_threshold,
            class_names=class_names, max_depth=args.max_depth,
            min_samples_split=args.min_samples_split, seed=args.seed,
        )
        print(f"importance pruning kept {len(selected)} of {len(features.FEATURE_NAMES)} features")
    else:
        model = tree.train(
            X, y, features.FEATURE_NAMES, class_names=class_names,
            max_depth=args.max_depth, min_samples_split=args.min_samples_split,
            seed=args.seed,
        )
    blob = tree.model_bytes(model)
    dataset.atomic_write_text(args.output, lambda fh: fh.write(blob.decode("utf-8")))
    print(f"trained on {len(y)} records ({', '.join(class_names)}); model at {args.output}")
    return 0


def cmd_cv(args) -> int:
    cleaned, _ = _load_clean(args.csv, _taxonomy(args))
    X, y = matrix_from_records(cleaned)
    report = tree.cross_validate(
        X, y, features.FEATURE_NAMES, k=args.k, class_names=_class_names(y),
        max_depth=args.max_depth, min_samples_split=args.min_samples_split,
        seed=args.seed,
    )
    text = report.render()
    if args.output:
        dataset.atomic_write_text(args.output, lambda fh: fh.write(text))
    sys.stdout.write(text)
    return 0


def cmd_predict(args) -> int:
    model = tree.load_model(args.model)
    csv_hash = features.schema_hash(features.FEATURE_NAMES)
    if model.schema_hash != csv_hash:
        raise CamsieveError(
            f"model schema hash {model.schema_hash} does not match "
            f"input schema hash {csv_hash}; refusing to predict"
        )
    records = dataset.read_csv(args.csv)

    def emit(fh):
        writer = csv.writer(fh)
        writer.writerow(list(features.ALL_COLUMNS) + ["Predicted Class", "Prediction Probability"])
        for rec in records:
            values = tuple(v if np.isfinite(v) else 0.0 for v in rec.values)
            proba = tree.predict_proba(model, values)
            best = max(range(len(proba)), key=lambda i: (proba[i], -i))
            writer.writerow(
                [rec.flow_id, rec.src_ip, rec.dst_ip, rec.src_port, rec.dst_port, rec.protocol]
                + [repr(v) for v in rec.values]
                + [rec.label, model.class_names[best], repr(proba[best])]
            )

    dataset.atomic_write_text(args.output, emit)
    print(f"predicted {len(records)} rows into {args.output}")
    return 0


def cmd_report(args) -> int:
    cleaned, replaced = _load_clean(args.csv, _taxonomy(args))
    X, y = matrix_from_records(cleaned)
    class_names = _class_names(y)
    lines: list[str] = ["dataset summary:"]
    for name in class_names:
        lines.append(f"  {name}: {y.count(name)} records")
    lines.append(f"  non-finite values cleaned: {replaced}")
    lines.append("")

    full_cv = tree.cross_validate(
        X, y, features.FEATURE_NAMES, k=args.k, class_names=class_names,
        max_depth=args.max_depth, seed=args.seed,
    )
    lines.append("all features:")
    lines.append(full_cv.render())

    selected, pruned_model = tree.prune_features(
        X, y, features.FEATURE_NAMES, threshold=args.importance_threshold,
        class_names=class_names, max_depth=args.max_depth, seed=args.seed,
    )
    pruned_cv = tree.cross_validate(
        X, y, features.FEATURE_NAMES, k=args.k, class_names=class_names,
        max_depth=args.max_depth, seed=args.seed, candidate_features=selected,
    )
    lines.append(
        f"importance pruning at {args.importance_threshold:g}: kept {len(selected)} "
        f"of {len(features.FEATURE_NAMES)} features"
    )
    lines.append(pruned_cv.render())

    full_model = tree.train(
        X, y, features.FEATURE_NAMES, class_names=class_names,
        max_depth=args.max_depth, seed=args.seed,
    )
    importances = tree.feature_importances(full_model)
    top = sorted(enumerate(importances), key=lambda kv: -kv[1])[:10]
    lines.append("top feature importances:")
    for idx, imp in top:
        if imp > 0:
            lines.append(f"  {features.FEATURE_NAMES[idx]}: {imp:.6f}")
    lines.append("")

    # deployment-style probability summary on a held-out split
    train_part, test_part = dataset.stratified_split(cleaned, (0.8, 0.2), args.seed)
    X_tr, y_tr = matrix_from_records(train_part)
    X_te, _ = matrix_from_records(test_part)
    deploy_model = tree.train(
        X_tr, y_tr, features.FEATURE_NAMES, class_names=class_names,
        max_depth=args.max_depth, seed=args.seed,
    )
    confident = 0
    for row in X_te:
        if max(tree.predict_proba(deploy_model, row)) >= 0.9:
            confident += 1
    frac = confident / len(X_te) if len(X_te) else 0.0
    lines.append(
        f"held-out flows with max class probability >= 0.9: {frac:.4f} "
        f"({confident}/{len(X_te)})"
    )

    text = "\n".join(lines) + "\n"
    if args.output:
        dataset.atomic_write_text(args.output, lambda fh: fh.write(text))
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="camsieve",
        description="Classify IoT-camera video traffic from flow statistics, "
                    "without IP or port features.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="pcap to 84-column feature CSV")
    p.add_argument("pcap", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--label", default="", help="label written on every flow")
    p.add_argument("--flow-timeout", type=float, default=DEFAULT_FLOW_TIMEOUT_S,
                   help="flow window in seconds (default 600)")
    p.add_argument("--activity-threshold", type=float, default=DEFAULT_ACTIVITY_THRESHOLD_S,
                   help="active/idle gap threshold in seconds (default 5)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth", help="generate synthetic traffic as pcap + manifest")
    p.add_argument("--kind", choices=[k.value for k in synth.TrafficKind], required=True)
    p.add_argument("-n", "--count", type=int, default=50, help="number of flows")
    p.add_argument("--seed", type=int, default=tree.DEFAULT_SEED)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--manifest", type=Path, default=None,
                   help="manifest path (default: <output>.manifest.jsonl)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inspect", help="media-protocol hint report for a pcap")
    p.add_argument("pcap", type=Path)
    p.add_argument("-o", "--output", type=Path, default=None)
    p.add_argument("--json", action="store_true")
    p.add_argument("--app", choices=[a.value.lower() for a in protocols.AppContext],
                   default="generic", help="payload-type table to apply")
    p.add_argument("--flow-timeout", type=float, default=DEFAULT_FLOW_TIMEOUT_S)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("train", help="train a decision tree from a labeled CSV")
    p.add_argument("csv", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--prune-threshold", type=float, default=None,
                   help="if set, drop features below this importance and retrain "
                        "(presets: 1e-6 negligible, 1e-4 compact)")
    _add_common_model_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="stratified k-fold cross-validation report")
    p.add_argument("csv", type=Path)
    p.add_argument("-o", "--output", type=Path, default=None)
    p.add_argument("-k", type=int, default=tree.DEFAULT_K_FOLDS)
    _add_common_model_args(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("predict", help="append predicted class and probability per row")
    p.add_argument("model", type=Path)
    p.add_argument("csv", type=Path)
    p.add_argument("-o", "--output", type=Path, required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="full evaluation: CV, importances, pruning, probabilities")
    p.add_argument("csv", type=Path)
    p.add_argument("-o", "--output", type=Path, default=None)
    p.add_argument("-k", type=int, default=tree.DEFAULT_K_FOLDS)
    p.add_argument("--importance-threshold", type=float,
                   default=tree.IMPORTANCE_THRESHOLD_COMPACT)
    _add_common_model_args(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CamsieveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
