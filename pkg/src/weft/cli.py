"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 model parse error, 3 unsupported
operator/attribute, 4 numeric mismatch, 5 I/O error. Machine-readable output
(--format json|csv) goes to stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .errors import (
    ConfigError,
    GraphError,
    InputError,
    NumericError,
    ParseError,
    PlanError,
    ShapeError,
    UnknownBackendError,
    UnsupportedError,
)
from .graph import Graph, format_graph, infer_shapes, validate
from .kernels import KernelRegistry, default_registry
from .modeljson import graph_to_json, load_json_model, save_json_model
from .onnx import parse_onnx
from .runtime import (
    RunConfig,
    autotune,
    compare_backends,
    execute,
    plan,
    report_to_csv,
    report_to_json,
    time_layers,
    time_network,
)
from .selftest import run_selftest
from .simplify import DEFAULT_PIPELINE, PASSES, run_pipeline
from .tensor import (
    Tensor,
    read_json_tensor,
    read_raw,
    write_json_tensor,
    write_raw,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_UNSUPPORTED = 3
EXIT_MISMATCH = 4
EXIT_IO = 5


def load_model(path: str) -> Graph:
    """Load a model file; JSON and ONNX binary are told apart by content."""
    with open(path, "rb") as fh:
        head = fh.read(64)
    if head.lstrip()[:1] == b"{":
        return load_json_model(path)
    with open(path, "rb") as fh:
        return parse_onnx(fh.read())


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_shape(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"bad shape '{text}', expected like 1x3x32x32") from None


def _parse_passes(text: str | None):
    if text is None or text.strip() == "default":
        return list(DEFAULT_PIPELINE)
    if text.strip() in ("", "none"):
        return []
    names = [p.strip() for p in text.split(",") if p.strip()]
    for name in names:
        if name not in PASSES:
            raise ConfigError(f"unknown pass '{name}' (available: {sorted(PASSES)})")
    return names


def _parse_overrides(pairs):
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"bad --backend '{pair}', expected <op-or-layer>=<backend>")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _read_input(path: str, shape_flag: str | None) -> Tensor:
    if path.endswith(".json"):
        return read_json_tensor(path)
    if shape_flag is None:
        raise ConfigError("raw tensor input needs --input-shape")
    return read_raw(path, _parse_shape(shape_flag))


def _prepare(args, registry: KernelRegistry):
    """Shared load -> simplify -> plan path for run/bench/compare."""
    g = load_model(args.model)
    passes = _parse_passes(args.passes)
    if passes:
        g, _ = run_pipeline(g, passes)
    cfg = RunConfig(
        threads=args.threads,
        backend_overrides=_parse_overrides(getattr(args, "backend", None)),
        autotune=getattr(args, "autotune", False),
        warmup=getattr(args, "warmup", 1),
        reps=getattr(args, "reps", 10),
        check_finite=getattr(args, "check_finite", False),
    )
    input_shapes = {}
    if getattr(args, "input_shape", None) and len(g.inputs) == 1:
        input_shapes[g.inputs[0][0]] = _parse_shape(args.input_shape)
    return g, cfg, plan(g, input_shapes or None, cfg, registry)


def _single_input(p, args) -> dict[str, Tensor]:
    names = list(p.input_buffers)
    if len(names) != 1:
        raise ConfigError(f"model has inputs {names}; the CLI drives exactly one")
    name = names[0]
    if getattr(args, "input", None):
        return {name: _read_input(args.input, getattr(args, "input_shape", None))}
    shape = p.buffers[p.input_buffers[name]].shape
    seed = getattr(args, "seed", 0)
    _log(f"generating seeded input for '{name}' {list(shape)} (seed {seed})")
    return {name: Tensor.seeded_uniform(shape, seed=seed)}


def cmd_inspect(args, registry) -> int:
    g = load_model(args.model)
    passes = _parse_passes(args.passes) if args.passes is not None else []
    if passes:
        g, _ = run_pipeline(g, passes)
    shapes = None
    try:
        overrides = {}
        if args.input_shape and len(g.inputs) == 1:
            overrides[g.inputs[0][0]] = _parse_shape(args.input_shape)
        shapes = infer_shapes(g, overrides or None)
    except ShapeError as exc:
        _log(f"shapes unavailable: {exc}")
    if args.format == "json":
        doc = graph_to_json(g)
        doc.pop("initializers")
        doc["node_count"] = len(g.nodes)
        if shapes:
            doc["shapes"] = {k: list(v) for k, v in shapes.items()}
        print(json.dumps(doc, indent=1))
    else:
        print(format_graph(g, shapes))
    return EXIT_OK


def cmd_validate(args, registry) -> int:
    g = load_model(args.model)
    diags = validate(g)
    for d in diags:
        print(f"{d.severity}: {d.message}")
    if any(d.severity == "error" for d in diags):
        _log(f"{sum(d.severity == 'error' for d in diags)} error(s)")
        return EXIT_PARSE
    print("ok" if not diags else f"ok with {len(diags)} warning(s)")
    return EXIT_OK


def cmd_simplify(args, registry) -> int:
    g = load_model(args.model)
    out, reports = run_pipeline(g, _parse_passes(args.passes))
    save_json_model(out, args.out)
    print(json.dumps([{
        "pass": r.pass_name,
        "nodes_before": r.nodes_before,
        "nodes_after": r.nodes_after,
        "rewrites": [{"rule": rule, "nodes": list(names)} for rule, names in r.rewrites],
    } for r in reports], indent=1))
    _log(f"wrote {args.out}: {len(g.nodes)} -> {len(out.nodes)} nodes")
    return EXIT_OK


def cmd_run(args, registry) -> int:
    _, cfg, p = _prepare(args, registry)
    inputs = _single_input(p, args)
    if cfg.autotune:
        p, log = autotune(p, inputs)
        for e in log:
            mark = "*" if e.selected else " "
            _log(f"autotune {mark} {e.layer} {e.backend_id}: "
                 f"{e.median_ns if e.error is None else e.error}")
    outputs = execute(p, inputs)
    name, tensor = next(iter(outputs.items()))
    if args.out.endswith(".json"):
        write_json_tensor(args.out, tensor)
    else:
        write_raw(args.out, tensor)
    _log(f"wrote output '{name}' {list(tensor.shape)} to {args.out}")
    return EXIT_OK


def cmd_bench(args, registry) -> int:
    _, cfg, p = _prepare(args, registry)
    inputs = _single_input(p, args)
    if cfg.autotune:
        p, log = autotune(p, inputs)
        for e in log:
            mark = "*" if e.selected else " "
            _log(f"autotune {mark} {e.layer} {e.backend_id}: "
                 f"{e.median_ns if e.error is None else e.error}")
    if args.per_layer or args.isolate_layers:
        report = time_layers(p, inputs, isolate=args.isolate_layers)
    else:
        report = time_network(p, inputs)
    if args.format == "json":
        print(json.dumps(report_to_json(report), indent=1))
    else:
        sys.stdout.write(report_to_csv(report))
    return EXIT_OK


def cmd_compare(args, registry) -> int:
    g = load_model(args.model)
    passes = _parse_passes(args.passes)
    if passes:
        g, _ = run_pipeline(g, passes)
    cfg = RunConfig(threads=args.threads)
    report = compare_backends(g, cfg, tolerance=args.tolerance,
                              registry=registry, input_seed=args.seed)
    if args.format == "json":
        print(json.dumps({
            "tolerance": report.tolerance,
            "ok": report.ok,
            "rows": [vars(r) for r in report.rows],
        }, indent=1))
    else:
        print("layer,op,backend,reference,max_abs_diff,within")
        for r in report.rows:
            print(f"{r.layer},{r.op},{r.backend_id},{r.reference_id},"
                  f"{r.max_abs_diff:.3e},{str(r.within).lower()}")
    if not report.ok:
        bad = [r for r in report.rows if not r.within]
        for r in bad:
            _log(f"mismatch: layer '{r.layer}' backend {r.backend_id} vs "
                 f"{r.reference_id}: max_abs_diff {r.max_abs_diff:.3e} "
                 f"> {report.tolerance:g}")
        return EXIT_MISMATCH
    return EXIT_OK


def cmd_selftest(args, registry) -> int:
    results = run_selftest()
    failed = 0
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        failed += not ok
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_MISMATCH


def build_parser() -> _Parser:
    parser = _Parser(prog="weft", description="Small transparent CNN inference runtime")
    parser.add_argument("--version", action="version",
                        version=f"weft {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=True):
        if model:
            p.add_argument("--model", required=True, help="model file (.onnx or .json)")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--passes", default=None,
                       help="comma list of simplification passes, or 'none'")

    p = sub.add_parser("inspect", help="print one line per node")
    common(p)
    p.add_argument("--input-shape", default=None)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("validate", help="structural diagnostics")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simplify", help="run passes, write the JSON model")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simplify)

    def runnerflags(p):
        p.add_argument("--input", default=None, help="raw .bin or .json tensor")
        p.add_argument("--input-shape", default=None)
        p.add_argument("--backend", action="append", metavar="KEY=BACKEND",
                       help="<op-or-layer>=<backend-id>, repeatable")
        p.add_argument("--autotune", action="store_true")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--check-finite", action="store_true", dest="check_finite")

    p = sub.add_parser("run", help="execute a model on one input")
    common(p)
    runnerflags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="time a network and optionally its layers")
    common(p)
    runnerflags(p)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--per-layer", action="store_true", dest="per_layer")
    p.add_argument("--isolate-layers", action="store_true", dest="isolate_layers")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("compare", help="cross-check all backends per layer")
    common(p)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("selftest", help="run the embedded golden-vector suite")
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None, registry: KernelRegistry | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    registry = registry or default_registry()
    try:
        return args.func(args, registry)
    except (ParseError, GraphError) as exc:
        _log(f"model error: {exc}")
        return EXIT_PARSE
    except UnsupportedError as exc:
        _log(f"unsupported: {exc}")
        return EXIT_UNSUPPORTED
    except (ConfigError, InputError, ShapeError, UnknownBackendError,
            PlanError) as exc:
        _log(f"usage error: {exc}")
        return EXIT_USAGE
    except NumericError as exc:
        _log(f"numeric error: {exc}")
        return EXIT_MISMATCH
    except OSError as exc:
        _log(f"i/o error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
