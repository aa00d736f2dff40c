"""Batch command-line front end.

Exit codes: 0 success, 1 a verification or derivation came back negative,
2 invalid input (schema or semantic), 3 simulation width overflow.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import jsonschema
import numpy as np

from . import compose, resource
from .concentrate import SchmidtSpectrum, YieldParams, concentrate, expected_ebits, reports_csv
from .code import BlockCode, CodeParams, alpha_premise, build_code, repetition_code
from .protocol import (
    MessageProtocol,
    all_message_pairs,
    coherentify,
    outcome_distribution,
    protocol_from_json,
    run_protocol,
)
from .qstate import TOL, Tolerances, WidthOverflowError, tolerances

EXIT_OK, EXIT_NEGATIVE, EXIT_INPUT, EXIT_WIDTH = 0, 1, 2, 3


class InputError(ValueError):
    """Input file missing, malformed or inconsistent."""


# ------------------------------------------------------------------ schemas


def load_schema(name: str) -> dict:
    text = (resources.files("cohcomm") / "schemas" / f"{name}.schema.json").read_text()
    return json.loads(text)


def validate(obj, name: str) -> None:
    try:
        jsonschema.validate(obj, load_schema(name))
    except jsonschema.ValidationError as e:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise InputError(f"{name}: {where}: {e.message}") from None


def read_json(path: str | Path, schema: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: not valid JSON ({e})") from None
    validate(data, schema)
    return data


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_default) + "\n"


def _default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Fraction):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _emit(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, newline="")


def _clip01(x: float) -> float:
    return float(min(1.0, max(0.0, x)))


# ------------------------------------------------------------ input models


def load_protocol(path: str | Path) -> MessageProtocol:
    data = read_json(path, "protocol")
    try:
        return protocol_from_json(data)
    except (ValueError, KeyError, TypeError) as e:
        raise InputError(f"{path}: {e}") from None


def _code_from_json(spec: dict | None, k: int, bits: int, alpha: float) -> BlockCode | None:
    if bits == 0:
        return None
    spec = spec or {"kind": "repetition"}
    if spec["kind"] == "repetition":
        return repetition_code(k, 2 ** bits)
    return build_code(CodeParams(k, 2 ** bits, alpha), seed=int(spec.get("seed", 0)))


def load_pipeline_config(path: str | Path) -> tuple[compose.PipelineConfig, dict]:
    data = read_json(path, "pipeline_config")
    proto = data["protocol"]
    try:
        if isinstance(proto, str):
            p = load_protocol(Path(path).parent / proto)
        else:
            validate(proto, "protocol")
            p = protocol_from_json(proto)
        k, alpha = int(data["k"]), float(data["alpha"])
        cfg = compose.PipelineConfig(
            protocol=p,
            k=k,
            code_a=_code_from_json(data.get("code_a"), k, p.c1_bits, alpha),
            code_b=_code_from_json(data.get("code_b"), k, p.c2_bits, alpha),
            alpha=alpha,
            r_side_channel=float(data.get("r_side_channel", 4.0)),
            delta_n=float(data.get("delta_n", 0.0)),
            abort_threshold=float(data.get("abort_threshold", 1.0)),
            catalysis_c=data.get("catalysis_c"),
        )
    except (ValueError, KeyError, TypeError) as e:
        if isinstance(e, InputError):
            raise
        raise InputError(f"{path}: {e}") from None
    return cfg, data


def _parse_bits(text: str | None, width: int, flag: str) -> str:
    text = text or ""
    if len(text) != width or any(ch not in "01" for ch in text):
        raise InputError(f"{flag} needs a {width}-bit string, got {text!r}")
    return text


# --------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    p = load_protocol(args.protocol)
    if args.all_messages:
        pairs = all_message_pairs(p)
    else:
        pairs = [(_parse_bits(args.a, p.c1_bits, "-a"), _parse_bits(args.b, p.c2_bits, "-b"))]
    table = []
    if p.c1_bits or p.c2_bits:
        for a, b in pairs:
            dist = outcome_distribution(p, run_protocol(p, a, b))
            for (ap, bp), pr in sorted(dist.items()):
                table.append({"a": a, "b": b, "a_out": ap, "b_out": bp, "prob": _clip01(pr)})
    rep = coherentify(p)
    out = {
        "schema": "cohcomm/simulate-report/v1",
        "protocol": p.name,
        "c1_bits": p.c1_bits,
        "c2_bits": p.c2_bits,
        "schmidt_number": p.gate.schmidt_number,
        "pr_table": table,
        "epsilon_measured": _clip01(rep.gamma.epsilon_measured),
        "epsilon_bar": _clip01(rep.gamma.epsilon_bar),
        "gamma00_entropy": max(0.0, rep.gamma00_entropy),
        "gamma00_rank": rep.gamma00_rank,
        "gamma00_spectrum": [_clip01(x) for x in rep.gamma00_spectrum],
        "decoupling_error": max(0.0, rep.decoupling_error),
        "min_key_fidelity": _clip01(rep.min_key_fidelity),
        "reconstruction_error": max(0.0, rep.reconstruction_error),
    }
    validate(out, "simulate_report")
    _emit(dumps(out), args.json)
    return EXIT_OK


# --------------------------------------------------------------- pipeline


def _trial_messages(cfg: compose.PipelineConfig, data: dict, rng: np.random.Generator):
    msgs = data.get("messages") or {}
    out = []
    for code, key in ((cfg.code_a, "a"), (cfg.code_b, "b")):
        if code is None:
            out.append([])
        elif key in msgs:
            out.append([int(m) for m in msgs[key]])
        else:
            out.append(rng.integers(0, code.params.n_symbols, size=code.l).tolist())
    return out


def _pipeline_chunk(cfg: compose.PipelineConfig, data: dict, items) -> list:
    rows = []
    ctx = compose.PipelineContext(cfg)
    for idx, seq in items:
        rng = np.random.default_rng(seq)
        ma, mb = _trial_messages(cfg, data, rng)
        ledger, _ = compose.run_pipeline(cfg, ma, mb, rng, ctx)
        rows.append((idx, ma, mb, ledger))
    return rows


def _set_tolerances(values: dict) -> None:
    for name, value in values.items():
        setattr(TOL, name, value)


def _parallel(worker: Callable, payload: tuple, items: list, jobs: int) -> list:
    """Run ``worker(*payload, chunk)`` over ``items`` and return the merged
    results sorted by the leading index of each row."""
    if jobs <= 1 or len(items) <= 1:
        rows = worker(*payload, items)
    else:
        chunks = [items[i::jobs] for i in range(jobs) if items[i::jobs]]
        snapshot = {f.name: getattr(TOL, f.name) for f in fields(Tolerances)}
        with ProcessPoolExecutor(max_workers=len(chunks), initializer=_set_tolerances, initargs=(snapshot,)) as pool:
            parts = pool.map(worker, *zip(*[(*payload, c) for c in chunks]))
            rows = [r for part in parts for r in part]
    return sorted(rows, key=lambda r: r[0])


def cmd_pipeline(args) -> int:
    cfg, data = load_pipeline_config(args.config)
    if data.get("messages"):
        for code, key in ((cfg.code_a, "a"), (cfg.code_b, "b")):
            given = data["messages"].get(key)
            if code is not None and given is not None and len(given) != code.l:
                raise InputError(f"messages.{key} needs {code.l} symbols, got {len(given)}")
    p = cfg.protocol
    rep = coherentify(p)
    eps = _clip01(rep.gamma.epsilon_measured)
    acc = cfg.accounting()
    f = compose.f_of(acc, p.gate.schmidt_number, p.c1_bits, p.c2_bits, eps, cfg.delta_n)
    summary = {
        "schema": "cohcomm/pipeline-summary/v1",
        "trials": args.trials,
        "seed": args.seed,
        "k": cfg.k,
        "alpha": cfg.alpha,
        "epsilon": eps,
        "alpha_premise": alpha_premise(p.c1_bits, p.c2_bits, eps),
        "chernoff_premise": bool(cfg.alpha >= alpha_premise(0, 0, eps) - 1e-12),
        "p_fail_mean": None,
        "p_fail_max": None,
        "failures": None,
        "ebits_out_mean": None,
        "ebits_in": None,
        "accounting": f.as_dict(),
        "f_limit": compose.f_limit(acc, p.c1_bits, p.c2_bits, cfg.delta_n),
    }
    if args.trials > 0:
        seqs = np.random.SeedSequence(args.seed).spawn(args.trials)
        rows = _parallel(_pipeline_chunk, (cfg, data), list(enumerate(seqs)), args.jobs)
        ledgers = [r[3] for r in rows]
        extra = [{"trial": i, "msg_a": " ".join(map(str, ma)), "msg_b": " ".join(map(str, mb))} for i, ma, mb, _ in rows]
        summary.update(
            p_fail_mean=float(np.mean([l.p_fail for l in ledgers])),
            p_fail_max=float(max(l.p_fail for l in ledgers)),
            failures=int(sum(l.failed for l in ledgers)),
            ebits_out_mean=float(np.mean([l.ebits_out for l in ledgers])),
            ebits_in=float(ledgers[0].ebits_in),
        )
        if args.csv:
            _emit(compose.ledger_csv(ledgers, extra), args.csv)
    validate(summary, "pipeline_summary")
    _emit(dumps(summary), args.json)
    return EXIT_OK


# ---------------------------------------------------------------- regions


def _parse_point(text: str) -> tuple[Fraction, ...]:
    try:
        return tuple(Fraction(x.strip()) for x in text.split(","))
    except (ValueError, ZeroDivisionError):
        raise InputError(f"--point needs comma-separated rationals, got {text!r}") from None


def cmd_regions(args) -> int:
    if args.script:
        path = Path(args.script)
        if not path.exists():
            shipped = resources.files("cohcomm") / "data" / "derivations" / path.name
            if shipped.is_file():
                path = Path(str(shipped))
        script = read_json(path, "derivation")
        rates = dict(kv.split("=", 1) for kv in args.rate or [])
        verdict = resource.check_derivation(script, rates)
        out = {"schema": "cohcomm/regions-report/v1", "verdict": verdict.to_json()}
        validate(out, "regions_report")
        _emit(dumps(out), args.json)
        return EXIT_OK if verdict.valid else EXIT_NEGATIVE
    if not args.map or args.point is None:
        raise InputError("regions needs --map NAME --point X,Y[,Z] or --script FILE")
    try:
        fn = resource.named_map(args.map)
    except resource.RegionError as e:
        raise InputError(str(e)) from None
    point = _parse_point(args.point)
    try:
        mapped = fn(point)
    except (ValueError, TypeError) as e:
        raise InputError(f"{args.map}: {e}") from None
    out = {
        "schema": "cohcomm/regions-report/v1",
        "map": args.map,
        "input": [str(x) for x in point],
        "output": [str(Fraction(x)) for x in mapped],
    }
    validate(out, "regions_report")
    _emit(dumps(out), args.json)
    return EXIT_OK


# ------------------------------------------------------------ concentrate


def _concentrate_chunk(spectrum: SchmidtSpectrum, k_prime: int, params, items) -> list:
    return [(idx, concentrate(spectrum, k_prime, np.random.default_rng(seq), params)) for idx, seq in items]


def cmd_concentrate(args) -> int:
    params = None
    if args.protocol:
        p = load_protocol(args.protocol)
        rep = coherentify(p)
        spectrum = SchmidtSpectrum(rep.gamma00_spectrum)
        params = YieldParams(p.c1_bits, p.c2_bits, min(rep.gamma.epsilon_measured, 1 - 1e-12), p.gate.schmidt_number, max(1, p.n_uses))
    elif args.spectrum:
        try:
            spectrum = SchmidtSpectrum([float(Fraction(x)) for x in args.spectrum.split(",")])
        except ValueError as e:
            raise InputError(f"--spectrum: {e}") from None
    else:
        raise InputError("concentrate needs --spectrum P1,P2,... or --protocol FILE")
    if args.k_prime < 1 or args.trials < 1:
        raise InputError("--k-prime and --trials must be positive")
    seqs = np.random.SeedSequence(args.seed).spawn(args.trials)
    rows = _parallel(_concentrate_chunk, (spectrum, args.k_prime, params), list(enumerate(seqs)), args.jobs)
    reports = [r for _, r in rows]
    ebits = np.array([r.ebits_out for r in reports])
    try:
        exact = expected_ebits(spectrum, args.k_prime)
    except ValueError:
        exact = None
    out = {
        "schema": "cohcomm/concentrate-report/v1",
        "spectrum": [float(x) for x in spectrum.probs],
        "entropy": spectrum.entropy,
        "k_prime": args.k_prime,
        "trials": args.trials,
        "seed": args.seed,
        "mean_ebits": float(ebits.mean()),
        "stderr": float(ebits.std(ddof=1) / math.sqrt(len(ebits))) if len(ebits) > 1 else 0.0,
        "exact_mean": exact,
        "bound_ebits": reports[0].bound_ebits,
        "bound_prob": reports[0].bound_prob,
        "success_rate": float(np.mean([r.success for r in reports])),
    }
    validate(out, "concentrate_report")
    if args.csv:
        _emit(reports_csv(reports), args.csv)
    _emit(dumps(out), args.json)
    return EXIT_OK


# ------------------------------------------------------ verify-identities


def cmd_verify_identities(args) -> int:
    names = args.names or list(resource.IDENTITY_CIRCUITS)
    unknown = [n for n in names if n not in resource.IDENTITY_CIRCUITS]
    if unknown:
        raise InputError(f"unknown identities {unknown}; known: {sorted(resource.IDENTITY_CIRCUITS)}")
    tol = args.check_tolerance
    items = []
    for name in names:
        r = resource.identity_report(name)
        items.append(
            {
                "name": r.name,
                "epsilon": max(0.0, r.epsilon),
                "passed": bool(r.epsilon <= tol),
                "consumes": r.consumes.to_json(),
                "produces": r.produces.to_json(),
                "ebits_per_cobit_on_plus": r.ebits_per_cobit_on_plus,
                "ebits_left": r.ebits_left,
            }
        )
    ok = all(i["passed"] for i in items)
    out = {"schema": "cohcomm/identities-report/v1", "tolerance": tol, "all_passed": ok, "identities": items}
    validate(out, "identities_report")
    _emit(dumps(out), args.json)
    return EXIT_OK if ok else EXIT_NEGATIVE


# ------------------------------------------------------------------ parser


def _tolerance_overrides(specs: Sequence[str]) -> tuple[dict, float]:
    """``--tolerance NAME=VALUE`` entries; a bare number sets the check
    threshold used by verify-identities."""
    known = {f.name: f.type for f in fields(Tolerances)}
    over: dict = {}
    check = 1e-10
    for spec in specs:
        name, sep, value = spec.partition("=")
        try:
            if not sep:
                check = float(name)
            elif name == "check":
                check = float(value)
            elif name in known:
                over[name] = int(value) if name == "max_qubits" else float(value)
            else:
                raise InputError(f"unknown tolerance {name!r}; known: check, {', '.join(known)}")
        except ValueError:
            raise InputError(f"bad tolerance value in {spec!r}") from None
    if check < 0:
        raise InputError("the check threshold must be nonnegative")
    return over, check


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", metavar="OUT", default=argparse.SUPPRESS, help="write the JSON report here (default stdout)")
    common.add_argument("--csv", metavar="OUT", default=argparse.SUPPRESS, help="write per-trial CSV rows here")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="root seed (default 0)")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker processes for trials (default 1)")
    common.add_argument(
        "--tolerance",
        action="append",
        metavar="NAME=VALUE",
        default=argparse.SUPPRESS,
        help=f"override a numeric tolerance ({', '.join(f.name for f in fields(Tolerances))}) or the check threshold",
    )

    parser = argparse.ArgumentParser(prog="cohcomm", description="Coherent bidirectional communication simulator.", parents=[common])
    parser.set_defaults(json=None, csv=None, seed=0, jobs=1, tolerance=[])
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run a protocol and its coherent wrapper")
    s.add_argument("--protocol", required=True, metavar="FILE")
    s.add_argument("--all-messages", action="store_true", help="tabulate every message pair (default without -a/-b)")
    s.add_argument("-a", metavar="BITS", help="Alice's message bits")
    s.add_argument("-b", metavar="BITS", help="Bob's message bits")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("pipeline", parents=[common], help="run the error-corrected composition over trials")
    s.add_argument("--config", required=True, metavar="FILE")
    s.add_argument("--trials", type=int, default=1)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("regions", parents=[common], help="map capacity-region points or check a derivation")
    s.add_argument("--map", metavar="NAME")
    s.add_argument("--point", metavar="X,Y,Z")
    s.add_argument("--script", metavar="FILE")
    s.add_argument("--rate", action="append", metavar="SYM=VALUE", help="override a derivation rate symbol")
    s.set_defaults(func=cmd_regions)

    s = sub.add_parser("concentrate", parents=[common], help="simulate entanglement concentration")
    s.add_argument("--spectrum", metavar="P1,P2,...")
    s.add_argument("--protocol", metavar="FILE", help="use the error-free ancilla spectrum of this protocol")
    s.add_argument("--k-prime", type=int, default=64)
    s.add_argument("--trials", type=int, default=1000)
    s.set_defaults(func=cmd_concentrate)

    s = sub.add_parser("verify-identities", parents=[common], help="check the resource identity circuits")
    s.add_argument("names", nargs="*")
    s.set_defaults(func=cmd_verify_identities)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # values such as "--point -1,2,0" would otherwise read as a flag
    for i in range(len(argv) - 1):
        if argv[i] in ("--point", "--spectrum") and argv[i + 1].startswith("-"):
            argv[i : i + 2] = [f"{argv[i]}={argv[i + 1]}", ""]
    args = parser.parse_args([a for a in argv if a != ""])
    if args.command == "simulate" and not args.all_messages and args.a is None and args.b is None:
        args.all_messages = True
    try:
        over, args.check_tolerance = _tolerance_overrides(args.tolerance)
        if args.jobs < 1:
            raise InputError("--jobs must be at least 1")
        with tolerances(**over):
            return args.func(args)
    except InputError as e:
        print(f"cohcomm: error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except WidthOverflowError as e:
        print(f"cohcomm: width overflow: {e}", file=sys.stderr)
        return EXIT_WIDTH


if __name__ == "__main__":
    sys.exit(main())
