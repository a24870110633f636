"""Command-line interface.

Exit codes: 0 success, 1 validation error (bad flags or inputs, failed
verify), 2 data corruption (checksum, format or decode failure), 3
internal error.  Failures print one JSON object on a single stderr line.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .container import archive_stats, read_archive, read_archive_bytes
from .errors import CorruptDataError, EtcwError, ValidationError
from .huffman import SymbolHistogram, shannon_entropy
from .parallel_decode import (DEFAULT_TARGET_ELEMENTS, build_plan, decode_all_serial,
                              decode_parallel, default_workers)
from .pipeline import compress_model, decode_archive, decompress_archive
from .quantizer import (DEFAULT_BLOCK_SIZE, quantization_error, quantize_blockwise,
                        quantize_tensor)
from .tensor_store import generate_synthetic, load_model, save_model

EXIT_OK, EXIT_VALIDATION, EXIT_CORRUPT, EXIT_INTERNAL = 0, 1, 2, 3
BENCH_MIN_ELEMENTS = 10_000

PRESETS = {
    # a few gaussian "layers", ~1.2M parameters
    "small": [("embed", (512, 256), "gaussian(0,0.02)"),
              ("attn.qkv", (256, 768), "gaussian(0,0.02)"),
              ("attn.out", (256, 256), "gaussian(0,0.02)"),
              ("mlp.up", (256, 1024), "gaussian_with_outliers(0,0.02,0.001,20)"),
              ("mlp.down", (1024, 256), "gaussian(0,0.02)"),
              ("norm", (256,), "uniform(0.8,1.2)")],
    # ~10.5M parameters, for benchmarks
    "bench": [(f"layer{i}.w", (1024, 1024), "gaussian(0,0.02)") for i in range(10)]
    + [("norm", (1024,), "uniform(0.5,1.5)")],
}


@dataclass
class RunConfig:
    command: str
    inputs: list[str] = field(default_factory=list)
    output: str | None = None
    bits: int = 8
    scheme: str = "auto"
    granularity: str = "tensor"
    block_size: int = DEFAULT_BLOCK_SIZE
    target_elements: int | None = DEFAULT_TARGET_ELEMENTS
    workers: int | None = None
    seed: int = 0
    report: str = "text"
    trials: int = 5
    sweep: tuple[int, ...] = (1, 2, 4)
    backend: str | None = None
    histogram: bool = False

    def validate(self) -> None:
        if self.bits not in (4, 8):
            raise ValidationError(f"--bits must be 4 or 8, got {self.bits}")
        if self.scheme not in ("auto", "unsigned", "asymmetric"):
            raise ValidationError(f"unknown --scheme {self.scheme!r}")
        if self.granularity not in ("tensor", "block"):
            raise ValidationError(f"unknown --granularity {self.granularity!r}")
        if self.granularity == "block":
            if self.block_size < 2:
                raise ValidationError(f"--block-size must be at least 2, got {self.block_size}")
            if self.scheme == "unsigned":
                raise ValidationError("block granularity always uses the asymmetric scheme")
        if self.target_elements is not None and not 0 < self.target_elements < 1 << 32:
            raise ValidationError("--segment-elements must be in [0, 2^32)")
        if self.workers is not None and self.workers < 1:
            raise ValidationError(f"--workers must be at least 1, got {self.workers}")
        if not 0 <= self.seed < 1 << 64:
            raise ValidationError("--seed must fit in an unsigned 64-bit integer")
        if self.trials < 1:
            raise ValidationError(f"--trials must be at least 1, got {self.trials}")
        if not self.sweep or any(w < 1 for w in self.sweep):
            raise ValidationError("--sweep needs positive worker counts")
        if self.report not in ("text", "structured"):
            raise ValidationError(f"unknown --report {self.report!r}")

    @property
    def worker_count(self) -> int:
        return self.workers or default_workers()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _positive_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="etcw", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, quant=False, decode=False):
        p.add_argument("--report", choices=("text", "structured"), default="text")
        p.add_argument("--seed", type=int, default=0)
        if quant:
            p.add_argument("--bits", type=int, choices=(4, 8), default=8)
            p.add_argument("--scheme", choices=("auto", "unsigned", "asymmetric"), default="auto")
            p.add_argument("--granularity", choices=("tensor", "block"), default="tensor")
            p.add_argument("--block-size", type=int, default=DEFAULT_BLOCK_SIZE)
            p.add_argument("--segment-elements", type=int, default=DEFAULT_TARGET_ELEMENTS,
                           help="symbols per segment; 0 keeps one segment per tensor")
        if decode:
            p.add_argument("--workers", type=int, default=None,
                           help="decode threads (default: $ETCW_WORKERS or CPU count)")
            p.add_argument("--backend", choices=("numba", "numpy"), default=None)

    p = sub.add_parser("generate", help="write a synthetic model (manifest + blob)")
    p.add_argument("output")
    p.add_argument("--preset", choices=sorted(PRESETS), default="small")
    p.add_argument("--tensor", action="append", default=[], metavar="NAME:DxD:DIST",
                   help="e.g. w0:1024x1024:gaussian(0,0.02); overrides --preset")
    p.add_argument("--dtype", choices=("float32", "float16"), default="float32")
    common(p)

    p = sub.add_parser("compress", help="quantize + Huffman-code a model into an archive")
    p.add_argument("input")
    p.add_argument("output")
    common(p, quant=True)

    p = sub.add_parser("decompress", help="decode an archive into dequantized weights")
    p.add_argument("input")
    p.add_argument("output")
    common(p, decode=True)

    p = sub.add_parser("verify", help="check an archive against its source model")
    p.add_argument("original")
    p.add_argument("archive")
    common(p, decode=True)

    p = sub.add_parser("stats", help="per-tensor entropy and compressibility")
    p.add_argument("input", help="an archive, or a manifest to quantize in memory")
    p.add_argument("--histogram", action="store_true",
                   help="include the full symbol histogram (structured report)")
    common(p, quant=True, decode=True)

    p = sub.add_parser("bench", help="serial vs parallel decode throughput")
    p.add_argument("input")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--sweep", type=_positive_list, default=(1, 2, 4),
                   help="worker counts to time, e.g. 1,2,4")
    common(p, decode=True)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    inputs = [getattr(args, k) for k in ("input", "original", "archive") if hasattr(args, k)]
    segment = getattr(args, "segment_elements", DEFAULT_TARGET_ELEMENTS)
    if segment is not None and segment < 0:
        raise ValidationError("--segment-elements must not be negative")
    cfg = RunConfig(
        command=args.command, inputs=inputs, output=getattr(args, "output", None),
        bits=getattr(args, "bits", 8), scheme=getattr(args, "scheme", "auto"),
        granularity=getattr(args, "granularity", "tensor"),
        block_size=getattr(args, "block_size", DEFAULT_BLOCK_SIZE),
        target_elements=segment or None, workers=getattr(args, "workers", None),
        seed=args.seed, report=args.report, trials=getattr(args, "trials", 5),
        sweep=tuple(getattr(args, "sweep", (1, 2, 4))), backend=getattr(args, "backend", None),
        histogram=getattr(args, "histogram", False))
    cfg.validate()
    return cfg


# -- output -------------------------------------------------------------------

class Reporter:
    """Text tables or JSON lines (one object per line, keyed by ``record``)."""

    def __init__(self, mode: str, stream=None):
        self.mode = mode
        self.stream = stream or sys.stdout

    @property
    def structured(self) -> bool:
        return self.mode == "structured"

    def emit(self, record: str, **fields):
        if self.structured:
            print(json.dumps({"record": record, **fields}, sort_keys=False), file=self.stream)

    def text(self, line: str = ""):
        if not self.structured:
            print(line, file=self.stream)

    def warn(self, message: str):
        if self.structured:
            self.emit("warning", message=message)
        else:
            print(f"warning: {message}", file=sys.stderr)


def _table(rows: list[dict], columns: list[tuple[str, str, int, str]]) -> list[str]:
    """Columns are (title, key, width, format spec); the first is left-aligned text."""
    lines = ["  ".join(f"{t:<{w}}" if i == 0 else f"{t:>{w}}"
                       for i, (t, _, w, _) in enumerate(columns))]
    for row in rows:
        lines.append("  ".join(f"{str(row[k]):<{w}}" if i == 0 else f"{row[k]:>{w}{f}}"
                               for i, (_, k, w, f) in enumerate(columns)))
    return lines


_STATS_COLUMNS = [
    ("tensor", "name", 24, ""), ("elements", "elements", 10, "d"), ("scheme", "scheme", 10, ""),
    ("eff.bits", "effective_bits", 9, ".4f"), ("saved", "bits_saved", 7, ".4f"),
    ("x fp16", "compression_ratio_fp16", 7, ".3f"), ("hdr %", "header_overhead_pct", 7, ".3f"),
]


def _report_archive_stats(rep: Reporter, stats) -> None:
    rows = []
    for t in stats.tensors:
        d = t.as_dict()
        d["header_overhead_pct"] = 100 * t.header_overhead
        rows.append(d)
        rep.emit("tensor", **t.as_dict())
    model = stats.as_dict()
    rep.emit("model", **model)
    for line in _table(rows, _STATS_COLUMNS):
        rep.text(line)
    rep.text()
    rep.text(f"model {stats.model_name}: {stats.elements} params, {stats.bits}-bit "
             f"{stats.granularity}-level")
    rep.text(f"  effective bits {stats.effective_bits:.4f}  bits saved {stats.bits_saved:.4f}  "
             f"(mean per tensor {stats.mean_tensor_bits_saved:.4f})")
    rep.text(f"  archive {stats.file_bytes} bytes, headers {100 * stats.header_overhead:.3f}%, "
             f"{stats.compression_ratio_fp16:.3f}x smaller than fp16")


# -- commands -----------------------------------------------------------------

def _parse_tensor_spec(text: str):
    try:
        name, shape, dist = text.split(":", 2)
        dims = tuple(int(d) for d in shape.lower().split("x"))
    except ValueError:
        raise ValidationError(f"--tensor expects NAME:D0xD1:DIST, got {text!r}") from None
    return name, dims, dist


def cmd_generate(cfg: RunConfig, args, rep: Reporter) -> int:
    spec = [_parse_tensor_spec(t) for t in args.tensor] or PRESETS[args.preset]
    spec = [(n, s, d, args.dtype) for n, s, d in spec]
    tensors = generate_synthetic(spec, cfg.seed)
    manifest = save_model(tensors, cfg.output)
    rep.emit("generated", manifest=cfg.output, tensors=len(tensors),
             parameters=manifest.total_parameters)
    rep.text(f"wrote {cfg.output}: {len(tensors)} tensors, {manifest.total_parameters} parameters")
    return EXIT_OK


def cmd_compress(cfg: RunConfig, args, rep: Reporter) -> int:
    tensors = load_model(cfg.inputs[0])
    data, _ = compress_model(tensors, cfg.bits, scheme=cfg.scheme, granularity=cfg.granularity,
                             block_size=cfg.block_size, target_elements=cfg.target_elements,
                             shuffle_seed=cfg.seed)
    Path(cfg.output).write_bytes(data)
    stats = archive_stats(read_archive_bytes(data, Path(cfg.output).stem))
    _report_archive_stats(rep, stats)
    return EXIT_OK


def cmd_decompress(cfg: RunConfig, args, rep: Reporter) -> int:
    archive = read_archive(cfg.inputs[0])
    tensors = decompress_archive(archive, cfg.worker_count, backend=cfg.backend)
    manifest = save_model(tensors, cfg.output, model_name=archive.model_name)
    rep.emit("decompressed", manifest=cfg.output, tensors=len(tensors),
             parameters=manifest.total_parameters, workers=cfg.worker_count)
    rep.text(f"wrote {cfg.output}: {len(tensors)} tensors, {manifest.total_parameters} "
             f"parameters ({cfg.worker_count} decode workers)")
    return EXIT_OK


def _requantize(original, rec):
    if rec.block_size is not None:
        return quantize_blockwise(original, rec.params[0].bits, rec.block_size)
    return quantize_tensor(original, rec.params[0].bits, rec.params[0].scheme)


def cmd_verify(cfg: RunConfig, args, rep: Reporter) -> int:
    originals = {t.name: t for t in load_model(cfg.inputs[0])}
    archive = read_archive(cfg.inputs[1])
    codes = decode_archive(archive, cfg.worker_count, backend=cfg.backend)
    failures = []
    names = [r.name for r in archive.records] + [n for n in originals
                                                if n not in set(codes)]
    for name in names:
        entry = {"name": name}
        if name not in originals or name not in codes:
            entry.update(ok=False, reason="missing from " + ("archive" if name not in codes
                                                            else "original"))
        else:
            rec = archive.record(name)
            original = originals[name]
            if original.shape != rec.shape:
                entry.update(ok=False, reason=f"shape {list(original.shape)} vs "
                                              f"{list(rec.shape)}")
            else:
                expected = _requantize(original, rec)
                stored = rec.quant_tensor(codes[name])
                err = quantization_error(original, stored)
                lossless = expected == stored
                entry.update(ok=lossless and err.within_bound, lossless=lossless,
                             max_error=err.max_error, half_step=err.max_half_step,
                             within_bound=err.within_bound, clipped=err.clipped)
                if not lossless:
                    entry["reason"] = "decoded codes differ from re-quantized source"
                elif not err.within_bound:
                    entry["reason"] = "quantization error exceeds s/2"
        if not entry["ok"]:
            failures.append(name)
        rep.emit("verify_tensor", **entry)
        if entry["ok"]:
            rep.text(f"  ok    {name:<24} max err {entry['max_error']:.3e} <= "
                     f"s/2 {entry['half_step']:.3e}")
        else:
            rep.text(f"  FAIL  {name:<24} {entry['reason']}")
    rep.emit("verify", ok=not failures, failed=failures, tensors=len(names))
    rep.text("PASS" if not failures else f"FAIL: {len(failures)} tensor(s): {', '.join(failures)}")
    return EXIT_OK if not failures else EXIT_VALIDATION


def _histogram_summary(hist: SymbolHistogram) -> dict:
    present = np.flatnonzero(hist.counts)
    return {"present_symbols": int(present.size), "min_code": int(present[0]),
            "max_code": int(present[-1]), "mode": int(np.argmax(hist.counts)),
            "mode_fraction": float(hist.counts.max() / hist.total)}


def cmd_stats(cfg: RunConfig, args, rep: Reporter) -> int:
    path = Path(cfg.inputs[0])
    head = path.read_bytes()[:4] if path.exists() else b""
    if head == b"ETCW":
        archive = read_archive(path)
        codes = decode_archive(archive, cfg.worker_count, backend=cfg.backend)
        hists = {r.name: SymbolHistogram(archive.bits, np.bincount(codes[r.name],
                                                                   minlength=1 << archive.bits))
                 for r in archive.records}
    else:
        tensors = load_model(path)
        data, compressed = compress_model(tensors, cfg.bits, scheme=cfg.scheme,
                                          granularity=cfg.granularity,
                                          block_size=cfg.block_size,
                                          target_elements=cfg.target_elements,
                                          shuffle_seed=cfg.seed)
        archive = read_archive_bytes(data, path.stem)
        hists = {c.quant.name: c.histogram for c in compressed}
    stats = archive_stats(archive)

    rows = []
    for t in stats.tensors:
        hist = hists[t.name]
        entropy = shannon_entropy(hist)
        row = {**t.as_dict(), "entropy": entropy, **_histogram_summary(hist)}
        if cfg.histogram:
            row["histogram"] = hist.counts.tolist()
        rep.emit("tensor", **row)
        rows.append(row)
    rep.emit("model", **stats.as_dict())
    for line in _table(rows, [
            ("tensor", "name", 24, ""), ("scheme", "scheme", 10, ""),
            ("entropy", "entropy", 8, ".4f"), ("avg.code", "average_code_length", 8, ".4f"),
            ("eff.bits", "effective_bits", 8, ".4f"), ("saved", "bits_saved", 7, ".4f"),
            ("symbols", "present_symbols", 7, "d"), ("mode", "mode", 4, "d")]):
        rep.text(line)
    rep.text()
    rep.text(f"model: effective bits {stats.effective_bits:.4f}, bits saved "
             f"{stats.bits_saved:.4f} of {stats.bits}")
    return EXIT_OK


def _time(fn, trials: int) -> list[float]:
    samples = []
    for _ in range(trials):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return samples


def cmd_bench(cfg: RunConfig, args, rep: Reporter) -> int:
    archive = read_archive(cfg.inputs[0])  # payload preloaded; I/O is not timed
    tensors = archive.encoded_tensors()
    segments = [s for t in tensors for s in t.segments]
    elements = sum(t.size for t in tensors)
    backend = cfg.backend or _kernels.BACKEND_NAME
    if elements < BENCH_MIN_ELEMENTS:
        rep.warn(f"only {elements} elements; timings are noise-dominated")

    decode_all_serial(tensors, backend=backend)  # warm-up (JIT compile)
    serial = _time(lambda: decode_all_serial(tensors, backend=backend), cfg.trials)
    serial_median = statistics.median(serial)
    rep.emit("bench_serial", samples=serial, median=serial_median,
             bytes_per_second=elements / serial_median, backend=backend)
    rep.text(f"{elements} elements in {len(segments)} segments, backend {backend}, "
             f"{cfg.trials} trials")
    rep.text(f"serial      median {serial_median * 1e3:9.3f} ms  "
             f"{elements / serial_median / 1e6:9.2f} MB/s")
    for workers in cfg.sweep:
        plan = build_plan(segments, workers, cfg.seed)
        samples = _time(lambda: decode_parallel(tensors, plan, backend=backend), cfg.trials)
        median = statistics.median(samples)
        rep.emit("bench_parallel", workers=workers, samples=samples, median=median,
                 speedup=serial_median / median, bytes_per_second=elements / median,
                 imbalance=plan.imbalance() if plan.imbalance() != float("inf") else None)
        rep.text(f"workers {workers:>3} median {median * 1e3:9.3f} ms  "
                 f"{elements / median / 1e6:9.2f} MB/s  speedup {serial_median / median:5.2f}x  "
                 f"load max/min {plan.imbalance():.2f}")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate, "compress": cmd_compress, "decompress": cmd_decompress,
    "verify": cmd_verify, "stats": cmd_stats, "bench": cmd_bench,
}


def _fail(exc: BaseException, code: int) -> int:
    payload = {"error": getattr(exc, "kind", type(exc).__name__), "exit_code": code,
               "message": getattr(exc, "message", str(exc))}
    for key in ("tensor", "record", "segment"):
        if getattr(exc, key, None) is not None:
            payload[key] = getattr(exc, key)
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = config_from_args(args)
        return COMMANDS[cfg.command](cfg, args, Reporter(cfg.report))
    except CorruptDataError as exc:
        return _fail(exc, EXIT_CORRUPT)
    except (ValidationError, OSError) as exc:
        return _fail(exc, EXIT_VALIDATION)
    except EtcwError as exc:
        return _fail(exc, EXIT_INTERNAL)
    except Exception as exc:  # noqa: BLE001 - exit-code contract
        return _fail(exc, EXIT_INTERNAL)


if __name__ == "__main__":
    sys.exit(main())
