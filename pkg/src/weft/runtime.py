"""Plan and execute inference, pick backends per layer, time networks and
individual layers.

The executor steps layers sequentially; parallelism lives inside kernels and
only partitions output elements, so execution is bitwise reproducible for any
thread count. A plan instance must not be executed concurrently with itself
(intermediate buffers are recycled), but distinct plans may run in parallel.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ConfigError,
    GraphError,
    InputError,
    NumericError,
    PlanError,
    UnknownBackendError,
)
from .graph import Graph, Node, OpKind, errors_only, infer_shapes, topo_sort, validate
from .kernels import KernelRegistry, default_registry
from .tensor import Tensor

ShapeT = tuple[int, ...]


@dataclass
class RunConfig:
    threads: int = 1  # single core is the primary measurement mode
    backend_overrides: dict[str, str] = field(default_factory=dict)
    autotune: bool = False
    autotune_reps: int = 5
    warmup: int = 1
    reps: int = 10
    check_finite: bool = False

    def check(self) -> None:
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.reps < 1:
            raise ConfigError(f"reps must be >= 1, got {self.reps}")
        if self.warmup < 0:
            raise ConfigError(f"warmup must be >= 0, got {self.warmup}")


@dataclass(frozen=True)
class BufferSpec:
    name: str
    shape: ShapeT
    role: str  # input | weight | intermediate | output


@dataclass(frozen=True)
class Step:
    node: Node
    backend_id: str
    input_buffers: tuple[int, ...]
    output_buffer: int
    candidates: tuple[str, ...]
    reference_id: str
    release_after: tuple[int, ...] = ()


@dataclass
class ExecutionPlan:
    graph: Graph
    config: RunConfig
    registry: KernelRegistry
    steps: list[Step]
    buffers: list[BufferSpec]
    input_buffers: dict[str, int]
    weight_buffers: dict[str, int]
    output_buffers: dict[str, int]
    shapes: dict[str, ShapeT]


def kind_key(node: Node, shapes: dict[str, ShapeT]) -> str:
    """Registry kind for a node; grouped convs with one filter per channel
    dispatch as 'depthwise'."""
    if node.kind == OpKind.CONV:
        c_in = shapes[node.inputs[0]][1]
        c_out = shapes[node.inputs[1]][0]
        if node.attrs.groups > 1 and node.attrs.groups == c_in == c_out:
            return "depthwise"
        return "conv"
    return node.kind.value.lower()


def _candidates(key: str, registry: KernelRegistry) -> tuple[str, ...]:
    if key == "depthwise":
        return tuple(registry.backends("depthwise") + registry.backends("conv"))
    return tuple(registry.backends(key))


def _default_backend(key: str, registry: KernelRegistry) -> str:
    if key == "depthwise":
        return "depthwise/specialized"
    if key == "conv":
        return "conv/gemm"
    return registry.reference_backend(key)


def _reference_backend(key: str, registry: KernelRegistry) -> str:
    # conv/direct is the oracle for the whole conv family, depthwise included
    return registry.reference_backend("conv" if key == "depthwise" else key)


def plan(g: Graph, input_shapes: dict[str, ShapeT] | None = None,
         cfg: RunConfig | None = None,
         registry: KernelRegistry | None = None) -> ExecutionPlan:
    """Resolve execution order, buffer assignments and a backend per step.

    Backend precedence: layer-name override > op-kind override > default
    policy (conv: conv/gemm, depthwise: depthwise/specialized, everything
    else: the reference backend).
    """
    cfg = cfg or RunConfig()
    cfg.check()
    registry = registry or default_registry()

    diags = errors_only(validate(g))
    if diags:
        raise GraphError("cannot plan an invalid graph: "
                         + "; ".join(d.message for d in diags))
    shapes = infer_shapes(g, input_shapes)
    order = topo_sort(g)

    buffers: list[BufferSpec] = []
    buffer_id: dict[str, int] = {}

    def add_buffer(name: str, role: str) -> int:
        buffer_id[name] = len(buffers)
        buffers.append(BufferSpec(name=name, shape=shapes[name], role=role))
        return buffer_id[name]

    for name, _ in g.inputs:
        add_buffer(name, "input")
    for name in g.initializers:
        add_buffer(name, "weight")
    for node in order:
        role = "output" if node.outputs[0] in g.outputs else "intermediate"
        add_buffer(node.outputs[0], role)

    steps: list[Step] = []
    for node in order:
        key = kind_key(node, shapes)
        candidates = _candidates(key, registry)
        if not candidates:
            raise PlanError(f"no backend registered for kind '{key}' "
                            f"(node '{node.name}')")
        chosen = cfg.backend_overrides.get(node.name) \
            or cfg.backend_overrides.get(key) \
            or _default_backend(key, registry)
        if not registry.has(chosen):
            raise UnknownBackendError(
                f"node '{node.name}': backend '{chosen}' is not registered")
        if chosen not in candidates:
            raise UnknownBackendError(
                f"node '{node.name}': backend '{chosen}' is not applicable "
                f"(candidates: {', '.join(candidates)})")
        steps.append(Step(
            node=node,
            backend_id=chosen,
            input_buffers=tuple(buffer_id[i] for i in node.inputs),
            output_buffer=buffer_id[node.outputs[0]],
            candidates=candidates,
            reference_id=_reference_backend(key, registry),
        ))

    # recycle intermediates after their last consumer
    last_use: dict[int, int] = {}
    for si, step in enumerate(steps):
        last_use[step.output_buffer] = si  # dead outputs die where they are born
        for bid in step.input_buffers:
            last_use[bid] = si
    releasable = {
        bid: si for bid, si in last_use.items()
        if buffers[bid].role == "intermediate"
    }
    for si, step in enumerate(steps):
        rel = tuple(bid for bid, last in releasable.items() if last == si)
        steps[si] = replace(step, release_after=rel)

    return ExecutionPlan(
        graph=g, config=cfg, registry=registry, steps=steps, buffers=buffers,
        input_buffers={n: buffer_id[n] for n, _ in g.inputs},
        weight_buffers={n: buffer_id[n] for n in g.initializers},
        output_buffers={n: buffer_id[n] for n in g.outputs},
        shapes=shapes,
    )


def _bind_inputs(p: ExecutionPlan, inputs: dict[str, Tensor]) -> dict[int, Tensor]:
    live: dict[int, Tensor] = {}
    for name, bid in p.input_buffers.items():
        t = inputs.get(name)
        if t is None:
            raise InputError(f"missing input '{name}'")
        if t.shape != p.buffers[bid].shape:
            raise InputError(f"input '{name}' has shape {t.shape}, "
                             f"plan expects {p.buffers[bid].shape}")
        live[bid] = t
    for name, t in p.graph.initializers.items():
        live[p.weight_buffers[name]] = t
    return live


def _run_steps(p: ExecutionPlan, live: dict[int, Tensor],
               step_times: list[int] | None = None,
               capture: list[tuple[list[Tensor], Tensor]] | None = None) -> None:
    cfg = p.config
    for step in p.steps:
        impl = p.registry.get(step.backend_id)
        args = [live[b] for b in step.input_buffers]
        if step_times is not None:
            t0 = time.perf_counter_ns()
            out = impl(args, step.node.attrs, cfg.threads)
            step_times.append(time.perf_counter_ns() - t0)
        else:
            out = impl(args, step.node.attrs, cfg.threads)
        if out.shape != p.buffers[step.output_buffer].shape:
            raise PlanError(
                f"backend '{step.backend_id}' produced shape {out.shape} for "
                f"'{step.node.name}', plan expects "
                f"{p.buffers[step.output_buffer].shape}")
        if cfg.check_finite and not np.isfinite(out.data).all():
            raise NumericError(f"non-finite values in output of '{step.node.name}'")
        if capture is not None:
            capture.append((args, out))
        live[step.output_buffer] = out
        for bid in step.release_after:
            live.pop(bid, None)


def execute(p: ExecutionPlan, inputs: dict[str, Tensor]) -> dict[str, Tensor]:
    """Run the plan; bitwise deterministic for a fixed plan and inputs,
    independent of the configured thread count."""
    live = _bind_inputs(p, inputs)
    # keep graph outputs alive even if some step would recycle them
    _run_steps(p, live)
    return {name: live[bid] for name, bid in p.output_buffers.items()}


# --- autotune ----------------------------------------------------------------

@dataclass(frozen=True)
class TuneEntry:
    layer: str
    backend_id: str
    median_ns: int | None
    selected: bool
    error: str | None = None


def autotune(p: ExecutionPlan, inputs: dict[str, Tensor],
             cfg: RunConfig | None = None) -> tuple[ExecutionPlan, list[TuneEntry]]:
    """Time every candidate backend on each step's real tensors and pick the
    fastest. Candidates that fail with a shape error are skipped, never
    selected. Returns a plan differing only in backend choices, plus the log."""
    cfg = cfg or p.config
    if cfg.autotune_reps < 3:
        raise ConfigError(f"autotune_reps must be >= 3, got {cfg.autotune_reps}")

    live = _bind_inputs(p, inputs)
    captured: list[tuple[list[Tensor], Tensor]] = []
    _run_steps(p, live, capture=captured)

    log: list[TuneEntry] = []
    new_steps: list[Step] = []
    for step, (args, _) in zip(p.steps, captured):
        if len(step.candidates) < 2:
            new_steps.append(step)
            continue
        medians: dict[str, int] = {}
        errors: dict[str, str] = {}
        for cand in step.candidates:
            impl = p.registry.get(cand)
            try:
                impl(args, step.node.attrs, cfg.threads)  # warmup
                samples = []
                for _ in range(cfg.autotune_reps):
                    t0 = time.perf_counter_ns()
                    impl(args, step.node.attrs, cfg.threads)
                    samples.append(time.perf_counter_ns() - t0)
                medians[cand] = int(statistics.median(samples))
            except Exception as exc:  # noqa: BLE001 - a bad candidate must not abort tuning
                errors[cand] = f"{type(exc).__name__}: {exc}"
        if not medians:
            raise PlanError(f"every candidate failed on '{step.node.name}': {errors}")
        best = min(medians, key=lambda c: (medians[c], step.candidates.index(c)))
        for cand in step.candidates:
            if cand in medians:
                log.append(TuneEntry(step.node.name, cand, medians[cand],
                                     selected=cand == best))
            else:
                log.append(TuneEntry(step.node.name, cand, None,
                                     selected=False, error=errors[cand]))
        new_steps.append(replace(step, backend_id=best))

    return replace(p, steps=new_steps), log


# --- timing ------------------------------------------------------------------

@dataclass
class TimingRecord:
    layer: str
    op: str
    backend_id: str
    samples: list[int]


@dataclass(frozen=True)
class Stats:
    min_ns: int
    median_ns: float
    mean_ns: float
    std_ns: float


def record_stats(record: TimingRecord) -> Stats:
    s = record.samples
    return Stats(
        min_ns=min(s),
        median_ns=float(statistics.median(s)),
        mean_ns=float(statistics.fmean(s)),
        std_ns=float(statistics.pstdev(s)),
    )


@dataclass
class BenchReport:
    model: str
    config: dict
    end_to_end: TimingRecord
    per_layer: list[TimingRecord]
    outputs: dict[str, Tensor]


NETWORK_ROW = "__network__"
CSV_HEADER = "layer,op,backend,reps,min_ns,median_ns,mean_ns,std_ns"


def _bench(p: ExecutionPlan, inputs: dict[str, Tensor], per_layer: bool,
           isolate: bool) -> BenchReport:
    cfg = p.config
    cfg.check()
    for _ in range(cfg.warmup):
        execute(p, inputs)

    e2e: list[int] = []
    layer_samples: list[list[int]] = [[] for _ in p.steps]
    outputs: dict[str, Tensor] = {}
    for _ in range(cfg.reps):
        live = _bind_inputs(p, inputs)
        times: list[int] | None = [] if (per_layer and not isolate) else None
        t0 = time.perf_counter_ns()
        _run_steps(p, live, step_times=times)
        e2e.append(time.perf_counter_ns() - t0)
        if times is not None:
            for i, t in enumerate(times):
                layer_samples[i].append(t)
        outputs = {name: live[bid] for name, bid in p.output_buffers.items()}

    if per_layer and isolate:
        live = _bind_inputs(p, inputs)
        captured: list[tuple[list[Tensor], Tensor]] = []
        _run_steps(p, live, capture=captured)
        for i, (step, (args, _)) in enumerate(zip(p.steps, captured)):
            impl = p.registry.get(step.backend_id)
            impl(args, step.node.attrs, cfg.threads)  # warmup
            for _ in range(cfg.reps):
                t0 = time.perf_counter_ns()
                impl(args, step.node.attrs, cfg.threads)
                layer_samples[i].append(time.perf_counter_ns() - t0)

    per_layer_records = []
    if per_layer:
        per_layer_records = [
            TimingRecord(layer=step.node.name, op=step.node.kind.value,
                         backend_id=step.backend_id, samples=layer_samples[i])
            for i, step in enumerate(p.steps)
        ]
    return BenchReport(
        model=p.graph.name,
        config={"threads": cfg.threads, "warmup": cfg.warmup, "reps": cfg.reps,
                "autotune": cfg.autotune, "isolate": isolate},
        end_to_end=TimingRecord(layer=NETWORK_ROW, op="network", backend_id="-",
                                samples=e2e),
        per_layer=per_layer_records,
        outputs=outputs,
    )


def time_network(p: ExecutionPlan, inputs: dict[str, Tensor]) -> BenchReport:
    """`warmup` untimed runs, then `reps` timed end-to-end runs."""
    return _bench(p, inputs, per_layer=False, isolate=False)


def time_layers(p: ExecutionPlan, inputs: dict[str, Tensor],
                isolate: bool = False) -> BenchReport:
    """Per-layer wall time. By default layers are timed inside the same run;
    isolate=True replays each step on captured inputs instead."""
    return _bench(p, inputs, per_layer=True, isolate=isolate)


def report_rows(report: BenchReport) -> list[dict]:
    rows = []
    for rec in report.per_layer + [report.end_to_end]:
        st = record_stats(rec)
        rows.append({
            "layer": rec.layer, "op": rec.op, "backend": rec.backend_id,
            "reps": len(rec.samples), "min_ns": st.min_ns,
            "median_ns": st.median_ns, "mean_ns": st.mean_ns, "std_ns": st.std_ns,
        })
    return rows


def report_to_csv(report: BenchReport) -> str:
    lines = [CSV_HEADER]
    for r in report_rows(report):
        lines.append(f"{r['layer']},{r['op']},{r['backend']},{r['reps']},"
                     f"{r['min_ns']},{r['median_ns']:.1f},{r['mean_ns']:.1f},"
                     f"{r['std_ns']:.1f}")
    return "\n".join(lines) + "\n"


def report_to_json(report: BenchReport) -> dict:
    return {"model": report.model, "config": report.config,
            "records": report_rows(report)}


# --- cross-backend comparison --------------------------------------------------

@dataclass(frozen=True)
class CompareRow:
    layer: str
    op: str
    backend_id: str
    reference_id: str
    max_abs_diff: float
    within: bool


@dataclass
class CompareReport:
    tolerance: float
    rows: list[CompareRow]

    @property
    def ok(self) -> bool:
        return all(r.within for r in self.rows)


def compare_backends(g: Graph, cfg: RunConfig | None = None,
                     tolerance: float = 1e-4,
                     registry: KernelRegistry | None = None,
                     inputs: dict[str, Tensor] | None = None,
                     input_seed: int = 0) -> CompareReport:
    """Run every alternative backend of every step on intermediates captured
    from a reference execution and report max_abs_diff against the reference
    backend's output."""
    from .tensor import tensor_compare

    cfg = cfg or RunConfig()
    registry = registry or default_registry()
    base = plan(g, cfg=cfg, registry=registry)
    # force every step onto its reference backend for the capture run
    ref_steps = [replace(s, backend_id=s.reference_id) for s in base.steps]
    ref_plan = replace(base, steps=ref_steps)

    if inputs is None:
        inputs = {}
        for i, (name, _) in enumerate(g.inputs):
            inputs[name] = Tensor.seeded_uniform(base.shapes[name],
                                                 seed=input_seed + i)

    live = _bind_inputs(ref_plan, inputs)
    captured: list[tuple[list[Tensor], Tensor]] = []
    _run_steps(ref_plan, live, capture=captured)

    rows: list[CompareRow] = []
    for step, (args, ref_out) in zip(ref_plan.steps, captured):
        if len(step.candidates) < 2:
            continue
        for cand in step.candidates:
            if cand == step.reference_id:
                continue
            out = registry.get(cand)(args, step.node.attrs, cfg.threads)
            diff = tensor_compare(ref_out, out).max_abs_diff
            rows.append(CompareRow(
                layer=step.node.name, op=step.node.kind.value, backend_id=cand,
                reference_id=step.reference_id, max_abs_diff=diff,
                within=diff <= tolerance))
    return CompareReport(tolerance=tolerance, rows=rows)
