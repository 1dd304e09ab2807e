"""Command-line front end.

Subcommands mirror the pipeline: gen, stage, checkpoint, budget,
audit, simulate, replay. Every run writes a manifest beside its
outputs holding the resolved config, the package version, and content
hashes of the inputs it read; replay reruns a manifest and reproduces
the outputs byte for byte. Manifests carry no timestamps.

Exit codes: 0 success, 2 configuration error, 3 input/output error,
4 provider failure, 5 invariant violation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

from . import __version__
from .audit import DEFAULT_TAU, NullFamily, audit_trace, read_trace_jsonl, summarize
from .errors import (
    DataError,
    DomainError,
    InvariantViolation,
    ProviderError,
)
from .pipeline import (
    gen_instances,
    measure_instances,
    run_budget,
    run_checkpoint,
    run_simulate,
    run_stage,
)
from .providers import BiasParams, DiskCache, FileCacheProvider, HttpProvider, SimulatedProvider
from .report import (
    BudgetRow,
    cert_to_dict,
    emit_budget_csv,
    emit_checkpoint_csv,
    emit_series_json,
    emit_stage_csv,
)
from .tasks import CheckpointMode, FillerKind, ScrubOp, TaskKind, read_jsonl, write_jsonl

__all__ = ["main", "build_parser"]

_TASK_NAMES = [t.value for t in TaskKind]
_FILLER_NAMES = [f.value for f in FillerKind]
_MODE_NAMES = [m.value for m in CheckpointMode]
_OP_NAMES = [o.value for o in ScrubOp]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_PROVIDER = 4
EXIT_INVARIANT = 5


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_bytes(path: str, data: bytes) -> None:
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(data)
    print(f"wrote {path}")


def _write_manifest(args: argparse.Namespace, inputs: list[str], outputs: list[str]) -> None:
    config = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "schema": 1,
        "command": args.command,
        "config": config,
        "package_version": __version__,
        "inputs": {p: _sha256_file(p) for p in sorted(set(inputs))},
        "outputs": sorted(set(outputs)),
    }
    path = os.path.join(args.outdir, f"{args.command}.manifest.json")
    _write_bytes(path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def _out_path(args: argparse.Namespace, explicit: str | None, default_name: str) -> str:
    if explicit:
        return explicit
    return os.path.join(args.outdir, default_name)


def _build_provider(args: argparse.Namespace):
    kind = args.provider
    if kind == "simulated":
        return SimulatedProvider(BiasParams(), seed=args.provider_seed)
    if kind == "file":
        if not args.scores:
            raise DomainError("--provider file needs --scores <jsonl>")
        return FileCacheProvider(args.scores)
    if kind == "http":
        if not (args.endpoint and args.model):
            raise DomainError("--provider http needs --endpoint and --model")
        cache = DiskCache(args.cache) if args.cache else None
        return HttpProvider(
            args.endpoint,
            args.model,
            api_key_env=args.api_key_env,
            max_parallel=args.max_parallel,
            cache=cache,
        )
    raise DomainError(f"unknown provider kind {kind!r}")


def _load_or_generate(args: argparse.Namespace, inputs: list[str]):
    if args.instances:
        inputs.append(args.instances)
        return read_jsonl(args.instances)
    return gen_instances(
        [TaskKind(t) for t in args.tasks],
        args.k_values,
        [FillerKind(f) for f in args.filler_types],
        args.seed,
        args.trials_per_condition,
        pool_size=args.pool_size,
        decoy_reps=args.decoy_reps,
        n_distractors=args.n_distractors,
    )


def cmd_gen(args: argparse.Namespace) -> int:
    instances = gen_instances(
        [TaskKind(t) for t in args.tasks],
        args.k_values,
        [FillerKind(f) for f in args.filler_types],
        args.seed,
        args.trials_per_condition,
        pool_size=args.pool_size,
        decoy_reps=args.decoy_reps,
        n_distractors=args.n_distractors,
    )
    out = _out_path(args, args.out, "instances.jsonl")
    d = os.path.dirname(out)
    if d:
        os.makedirs(d, exist_ok=True)
    n = write_jsonl(instances, out)
    print(f"wrote {out} ({n} instances)")
    _write_manifest(args, [], [out])
    return EXIT_OK


def cmd_stage(args: argparse.Namespace) -> int:
    inputs: list[str] = []
    instances = _load_or_generate(args, inputs)
    provider = _build_provider(args)
    rows = run_stage(provider, instances, confidence=args.confidence)
    out_csv = _out_path(args, args.out_csv, "stage.csv")
    _write_bytes(out_csv, emit_stage_csv(rows))
    outputs = [out_csv]
    if args.out_json:
        _write_bytes(args.out_json, emit_series_json(rows, quantity=args.series_quantity))
        outputs.append(args.out_json)
    _write_manifest(args, inputs, outputs)
    return EXIT_OK


def cmd_checkpoint(args: argparse.Namespace) -> int:
    inputs: list[str] = []
    instances = _load_or_generate(args, inputs)
    provider = _build_provider(args)
    rows = run_checkpoint(
        provider,
        instances,
        args.checkpoint_every,
        CheckpointMode(args.checkpoint_mode),
        confidence=args.confidence,
    )
    out_csv = _out_path(args, args.out_csv, "checkpoint.csv")
    _write_bytes(out_csv, emit_checkpoint_csv(rows))
    _write_manifest(args, inputs, [out_csv])
    return EXIT_OK


def cmd_budget(args: argparse.Namespace) -> int:
    inputs: list[str] = []
    instances = _load_or_generate(args, inputs)
    provider = _build_provider(args)
    family = NullFamily(operators=tuple(ScrubOp(o) for o in args.null_ops), name="cli")
    measurements = measure_instances(provider, instances, family)
    rows, certs = run_budget(measurements, args.tau, label=args.label)
    out_csv = _out_path(args, args.out_csv, "budget.csv")
    _write_bytes(out_csv, emit_budget_csv(rows))
    outputs = [out_csv]
    cert_path = _out_path(args, args.out_json, "certificates.jsonl")
    lines = []
    for tau in sorted(certs):
        for iid, cert in certs[tau]:
            doc = {"tau": tau, "instance_id": iid}
            doc.update(cert_to_dict(cert))
            lines.append(json.dumps(doc, sort_keys=True))
    _write_bytes(cert_path, ("\n".join(lines) + "\n").encode("utf-8"))
    outputs.append(cert_path)
    _write_manifest(args, inputs, outputs)
    return EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    steps = read_trace_jsonl(args.trace)
    label = args.label or os.path.basename(args.trace)
    rows: list[BudgetRow] = []
    step_lines: list[str] = []
    for tau in args.tau:
        audits = audit_trace(steps, tau=tau)
        rows.append(BudgetRow.from_summary(label, tau, summarize(audits)))
        for a in audits:
            doc: dict = {"tau": tau, "index": a.index, "outcome": a.outcome}
            if a.certificate is None:
                doc["unauditable"] = a.unauditable_reason
            else:
                doc.update(cert_to_dict(a.certificate))
            step_lines.append(json.dumps(doc, sort_keys=True))
    out_csv = _out_path(args, args.out_csv, "audit.csv")
    _write_bytes(out_csv, emit_budget_csv(rows))
    steps_path = _out_path(args, args.out_json, "audit_steps.jsonl")
    _write_bytes(steps_path, ("\n".join(step_lines) + "\n").encode("utf-8"))
    _write_manifest(args, [args.trace], [out_csv, steps_path])
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    doc = run_simulate(
        args.m,
        args.alphas,
        checkpoint_positions=args.checkpoint_positions,
    )
    out = _out_path(args, args.out_json, "simulate.json")
    _write_bytes(out, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    _write_manifest(args, [], [out])
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    try:
        with open(args.manifest, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read manifest {args.manifest}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{args.manifest}: invalid JSON: {exc}") from exc
    try:
        command = manifest["command"]
        config = dict(manifest["config"])
    except (KeyError, TypeError) as exc:
        raise DataError(f"{args.manifest}: not a run manifest: {exc}") from exc
    handler = _HANDLERS.get(command)
    if handler is None:
        raise DataError(f"{args.manifest}: unknown command {command!r}")
    for path, digest in manifest.get("inputs", {}).items():
        if not os.path.exists(path):
            raise DataError(f"replay input missing: {path}")
        if _sha256_file(path) != digest:
            raise DataError(f"replay input changed since the recorded run: {path}")
    replayed = argparse.Namespace(**config)
    return handler(replayed)


_HANDLERS = {
    "gen": cmd_gen,
    "stage": cmd_stage,
    "checkpoint": cmd_checkpoint,
    "budget": cmd_budget,
    "audit": cmd_audit,
    "simulate": cmd_simulate,
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--outdir", default=".", help="directory for default-named outputs and the manifest")
    p.add_argument("--seed", type=int, default=0, help="master generation seed")
    p.add_argument("--confidence", type=float, default=0.95, help="Wilson CI confidence level")


def _add_gen_params(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tasks", nargs="+", choices=_TASK_NAMES, default=["competing_vars"])
    p.add_argument("--k_values", nargs="+", type=int, default=[0, 256, 1024])
    p.add_argument("--filler_types", nargs="+", choices=_FILLER_NAMES, default=["repeat"])
    p.add_argument("--trials_per_condition", type=int, default=100)
    p.add_argument("--pool_size", type=int, default=50, help="candidate pool size")
    p.add_argument("--decoy_reps", type=int, default=12, help="competitor repetitions in decoy filler")
    p.add_argument("--n_distractors", type=int, default=48)


def _add_provider_params(p: argparse.ArgumentParser) -> None:
    p.add_argument("--provider", choices=["simulated", "file", "http"], default="simulated")
    p.add_argument("--provider_seed", type=int, default=0, help="noise seed of the simulated provider")
    p.add_argument("--scores", default=None, help="score JSONL for --provider file")
    p.add_argument("--endpoint", default=None, help="completion URL for --provider http")
    p.add_argument("--model", default=None, help="model name for --provider http")
    p.add_argument("--api_key_env", default="ROUTING_AUDIT_API_KEY",
                   help="environment variable holding the API key")
    p.add_argument("--max_parallel", type=int, default=4, help="bounded request parallelism")
    p.add_argument("--cache", default=None, help="response cache JSONL for --provider http")


def _add_instances_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--instances", default=None,
                   help="instance JSONL from gen; omitted means generate in-memory from the gen flags")
    _add_gen_params(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="routing-audit",
        description="Readout-failure diagnostics: stage classification, "
        "information budgets, binding tasks, channel simulation, trace audits.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate task instances to JSONL")
    _add_common(p)
    _add_gen_params(p)
    p.add_argument("--out", default=None, help="instance JSONL path (default <outdir>/instances.jsonl)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("stage", help="score instances and emit the stage classification table")
    _add_common(p)
    _add_instances_source(p)
    _add_provider_params(p)
    p.add_argument("--out_csv", default=None)
    p.add_argument("--out_json", default=None, help="optional plot series JSON")
    p.add_argument("--series_quantity", choices=["acc", "cand_acc"], default="acc")
    p.set_defaults(func=cmd_stage)

    p = sub.add_parser("checkpoint", help="paired baseline/checkpoint run on identical seeds")
    _add_common(p)
    _add_instances_source(p)
    _add_provider_params(p)
    p.add_argument("--checkpoint_every", type=int, required=True)
    p.add_argument("--checkpoint_mode", choices=_MODE_NAMES, required=True)
    p.add_argument("--out_csv", default=None)
    p.set_defaults(func=cmd_checkpoint)

    p = sub.add_parser("budget", help="live envelope measurement and budget certificates")
    _add_common(p)
    _add_instances_source(p)
    _add_provider_params(p)
    p.add_argument("--tau", nargs="+", type=float, default=[DEFAULT_TAU])
    p.add_argument("--null_ops", nargs="+", choices=_OP_NAMES, default=_OP_NAMES)
    p.add_argument("--label", default="binding_audit")
    p.add_argument("--out_csv", default=None)
    p.add_argument("--out_json", default=None, help="certificate JSONL path")
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("audit", help="budget-audit a precomputed trace (no network)")
    _add_common(p)
    p.add_argument("--trace", required=True, help="trace step JSONL with p1/p0_by_null")
    p.add_argument("--tau", nargs="+", type=float, default=[DEFAULT_TAU])
    p.add_argument("--label", default=None)
    p.add_argument("--out_csv", default=None)
    p.add_argument("--out_json", default=None, help="per-step certificate JSONL path")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("simulate", help="copy-or-noise chain contraction report")
    _add_common(p)
    p.add_argument("--m", type=int, default=50, help="alphabet size")
    p.add_argument("--alphas", nargs="+", type=float, required=True)
    p.add_argument("--checkpoint_positions", nargs="*", type=int, default=[])
    p.add_argument("--out_json", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="rerun a recorded manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles --help/usage errors itself
        return int(exc.code or 0)
    try:
        return args.func(args)
    except DomainError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
