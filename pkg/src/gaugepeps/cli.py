"""Scenario runner: config file in, CSV tables and a phase report out.

Config files are flat ``key = value`` lines with ``#`` comments. Example::

    group = Z2
    alpha = 1
    beta = 0.1
    gamma = 0
    delta = 0.95
    loops = 1-7 x 1-7

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 memory budget exceeded.
"""

from __future__ import annotations

import argparse
import math
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import analysis as an
from .engine import (
    DEFAULT_BUDGET_BYTES,
    Contraction,
    LoopSpec,
    ResourceBudgetError,
    TorusSpec,
    epar_spectrum,
    norm,
    wilson_exact,
    wilson_thermo,
)
from .oracle import MAX_CONFIGS, OracleSizeError, build_state, direct_wilson, log_norm
from .symmetry import GroupSpec
from .tensor import GaugeTensor, SelectionRuleError, Z2Params, build_z2_tensor, build_zn_tensor

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_BUDGET = 0, 1, 2, 3
TASKS = ("norm", "wilson", "spectra", "creutz", "fit", "classify", "thermo", "oracle-check")
DEFAULT_TASKS = ("norm", "wilson", "spectra", "creutz", "fit", "classify")
ORACLE_RTOL = 1e-10

PRESETS = {
    "confining": "group = Z2\nalpha = 1\nbeta = 0.1\ngamma = 0\ndelta = 0.95\n",
    "degenerate": "group = Z2\nalpha = 1\nbeta = 0.1\ngamma = 0\ndelta = 1\n",
    "nonperturbative": "group = Z2\nalpha = 0.1\nbeta = 0.1\ngamma = 1\ndelta = 0.3\n",
    "perturbative": "group = Z2\nalpha = 1\nbeta = 0.05\ngamma = 0\ndelta = 0.9\nN2 = 60\n",
}

Z2_KEYS = ("alpha", "beta", "gamma", "delta")
KNOWN_KEYS = (
    {"group", "coefficients", "N1", "N2", "J", "loops", "tasks", "fit_window", "out",
     "threads", "oracle_N1", "oracle_N2", "budget_gib"}
    | set(Z2_KEYS)
    | {f"{k}_{part}" for k in Z2_KEYS for part in ("re", "im")}
)


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass
class ScenarioConfig:
    group: GroupSpec
    tensor: GaugeTensor
    N1: int = 8
    N2: int = 100
    J: int = 1
    loops: list[tuple[int, int]] = field(default_factory=list)
    tasks: tuple[str, ...] = DEFAULT_TASKS
    fit_window: tuple[list[int], list[int]] | None = None
    out: Path = Path("out")
    threads: int = 1
    oracle_N1: int = 3
    oracle_N2: int = 3
    budget_bytes: int = DEFAULT_BUDGET_BYTES
    z2: Z2Params | None = None

    @property
    def torus(self) -> TorusSpec:
        return TorusSpec(self.N1, self.N2)


_RANGE = re.compile(r"^(-?\d+)\s*(?:-\s*(-?\d+))?$")


def _int_list(text: str, line: int) -> list[int]:
    """Comma-separated integers and inclusive ranges, e.g. ``1-3,5``."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        m = _RANGE.match(part)
        if not m:
            raise ConfigError(f"malformed integer range {part!r}", line)
        lo = int(m.group(1))
        hi = int(m.group(2)) if m.group(2) is not None else lo
        out.extend(range(lo, hi + 1))
    if not out:
        raise ConfigError("empty range", line)
    return out


def _grid(text: str, line: int) -> list[tuple[int, int]]:
    """``"1-6 x 1-6"`` or several such terms joined by ``;``."""
    loops: list[tuple[int, int]] = []
    for term in text.split(";"):
        term = term.strip()
        if not term:
            continue
        if "x" not in term:
            raise ConfigError(f"loop term {term!r} must look like 'R1s x R2s'", line)
        a, b = term.split("x", 1)
        for r1 in _int_list(a, line):
            for r2 in _int_list(b, line):
                if (r1, r2) not in loops:
                    loops.append((r1, r2))
    return sorted(loops)


def _complex(text: str, line: int) -> complex:
    try:
        return complex(text.replace(" ", ""))
    except ValueError:
        raise ConfigError(f"malformed complex number {text!r}", line) from None


def _int(text: str, line: int, key: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {text!r}", line) from None


def parse_config(text: str, base_dir: Path | None = None) -> ScenarioConfig:
    raw: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if not value:
            raise ConfigError(f"empty value for {key!r}", lineno)
        raw[key] = (value, lineno)

    has_z2 = any(k.split("_")[0] in Z2_KEYS for k in raw)
    missing = []
    if "group" not in raw:
        missing.append("group")
    if not has_z2 and "coefficients" not in raw:
        missing.append("alpha/beta/gamma/delta or coefficients")
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")

    def get(key):
        return raw.get(key, (None, None))

    value, line = get("group")
    try:
        group = GroupSpec.parse(value)
    except ValueError as exc:
        raise ConfigError(str(exc), line) from None

    ints = {}
    for key, default, lo in (("N1", 8, 2), ("N2", 100, 2), ("J", 1, None), ("threads", 1, 1),
                             ("oracle_N1", 3, 2), ("oracle_N2", 3, 2)):
        value, line = get(key)
        v = default if value is None else _int(value, line, key)
        if lo is not None and v < lo:
            raise ConfigError(f"{key} must be >= {lo}, got {v}", line)
        ints[key] = v
    value, line = get("J")
    if not group.contains(ints["J"]):
        raise ConfigError(f"flux irrep J={ints['J']} not in {group.name}", line)

    z2 = None
    if has_z2:
        if "coefficients" in raw:
            raise ConfigError("give either Z2 parameters or a coefficients file", raw["coefficients"][1])
        if group != GroupSpec.cyclic(2):
            line = min(l for k, (_, l) in raw.items() if k.split("_")[0] in Z2_KEYS)
            raise ConfigError("alpha/beta/gamma/delta need group = Z2", line)
        vals = []
        for k in Z2_KEYS:
            v = 0j
            if k in raw:
                v = _complex(raw[k][0], raw[k][1])
            for part, unit in (("re", 1), ("im", 1j)):
                if f"{k}_{part}" in raw:
                    if k in raw:
                        raise ConfigError(f"{k} given twice", raw[f"{k}_{part}"][1])
                    s, l = raw[f"{k}_{part}"]
                    try:
                        v += unit * float(s)
                    except ValueError:
                        raise ConfigError(f"malformed number {s!r}", l) from None
            vals.append(v)
        try:
            z2 = Z2Params(*vals)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        tensor = build_z2_tensor(z2)
    else:
        value, line = get("coefficients")
        path = Path(value)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        try:
            loaded = GaugeTensor.load(path)
            if loaded.group != group:
                raise ConfigError(f"coefficient file is for {loaded.group.name}, config says {group.name}", line)
            tensor = build_zn_tensor(group, loaded.elements)
        except OSError as exc:
            raise ConfigError(f"cannot read coefficients: {exc}", line) from None
        except (SelectionRuleError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad coefficient file: {exc}", line) from None

    N1, N2 = ints["N1"], ints["N2"]
    value, line = get("loops")
    if value is None:
        loops = [(a, b) for a in range(1, min(7, N1 - 1) + 1) for b in range(1, min(7, N2 - 1) + 1)]
    else:
        loops = _grid(value, line)
    for a, b in loops:
        if not (1 <= a < N1 and 1 <= b < N2):
            raise ConfigError(f"loop {a}x{b} does not fit the {N1}x{N2} torus", line)

    value, line = get("tasks")
    tasks = DEFAULT_TASKS
    if value is not None:
        tasks = tuple(t.strip() for t in value.split(",") if t.strip())
        for t in tasks:
            if t not in TASKS:
                raise ConfigError(f"unknown task {t!r}; choose from {', '.join(TASKS)}", line)

    value, line = get("fit_window")
    window = None
    if value is not None:
        if "x" not in value:
            raise ConfigError("fit_window must look like 'R1s x R2s'", line)
        a, b = value.split("x", 1)
        window = (_int_list(a, line), _int_list(b, line))

    value, line = get("budget_gib")
    budget = DEFAULT_BUDGET_BYTES
    if value is not None:
        try:
            budget = int(float(value) * 2**30)
        except ValueError:
            raise ConfigError(f"malformed budget {value!r}", line) from None

    if "oracle-check" in tasks:
        o1, o2 = ints["oracle_N1"], ints["oracle_N2"]
        if group.dim ** (2 * o1 * o2) > MAX_CONFIGS:
            raise ConfigError(
                f"oracle torus {o1}x{o2} exceeds the oracle cap for {group.name}",
                get("oracle_N1")[1] or get("tasks")[1],
            )

    value, _ = get("out")
    return ScenarioConfig(
        group=group,
        tensor=tensor,
        N1=N1,
        N2=N2,
        J=ints["J"],
        loops=loops,
        tasks=tasks,
        fit_window=window,
        out=Path(value) if value else Path("out"),
        threads=ints["threads"],
        oracle_N1=ints["oracle_N1"],
        oracle_N2=ints["oracle_N2"],
        budget_bytes=budget,
        z2=z2,
    )


class ArtifactWriter:
    """The only place files are written; called from the orchestrating thread."""

    def __init__(self, out: Path):
        self.out = out
        self.written: list[Path] = []

    def write(self, name: str, text: str) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        with open(path, "w", newline="\n", encoding="ascii") as fh:
            fh.write(text)
        self.written.append(path)


def _say(msg: str, stream=None) -> None:
    print(msg, file=stream or sys.stdout, flush=True)


def run(cfg: ScenarioConfig, stream=None) -> int:
    try:
        return _run(cfg, stream)
    except ResourceBudgetError as exc:
        _say(f"budget: {exc}", stream)
        return EXIT_BUDGET
    except (ArithmeticError, an.AnalysisError, OracleSizeError) as exc:
        _say(f"numerical failure: {exc}", stream)
        return EXIT_NUMERIC


def _run(cfg: ScenarioConfig, stream) -> int:
    tensor, torus = cfg.tensor, cfg.torus
    ctx = Contraction(tensor, cfg.N1, budget=cfg.budget_bytes)  # budget checked before any row exists
    writer = ArtifactWriter(cfg.out)
    tasks = set(cfg.tasks)
    status = EXIT_OK

    if "norm" in tasks:
        ln = norm(tensor, torus, ctx=ctx)
        writer.write("norm.csv", an._csv(["N1", "N2", "log_norm"], [(cfg.N1, cfg.N2, float(ln))]))
        _say(f"norm: log<psi|psi> = {ln:.12g}", stream)

    need_table = tasks & {"wilson", "creutz", "fit", "classify"}
    table = None
    if need_table:
        def one(loop):
            return loop, wilson_exact(tensor, torus, LoopSpec(*loop, cfg.J), ctx=ctx)

        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(one, cfg.loops))
        table = an.WilsonTable()
        flags = set()
        for (a, b), w in results:
            table.add(a, b, w)
            if w.flag:
                flags.add(w.flag)
        if "wilson" in tasks:
            writer.write("wilson.csv", an.wilson_csv(table))
            extra = f" ({'; '.join(sorted(flags))})" if flags else ""
            _say(f"wilson: {len(results)} loops{extra}", stream)

    spectrum = None
    if tasks & {"spectra", "classify"}:
        spectrum = epar_spectrum(tensor, cfg.N1, range(1, cfg.N1), J=cfg.J, ctx=ctx)
        if "spectra" in tasks:
            writer.write("spectrum.csv", an.spectrum_csv(spectrum))
            lead = spectrum.leading_log_abs()
            _say(f"spectra: log|rho'_1(R)| for R=1..{cfg.N1 - 1}: "
                 + " ".join(f"{lead[R]:.6g}" for R in sorted(lead)), stream)

    if "creutz" in tasks:
        chi = an.creutz_table(table)
        writer.write("creutz.csv", an.creutz_csv(chi))
        if chi:
            last = max(chi)
            _say(f"creutz: {len(chi)} ratios, chi{last} = {chi[last]:.6g}", stream)
        else:
            _say("creutz: no complete 2x2 block of loops", stream)

    fit = None
    if tasks & {"fit", "classify"}:
        window = cfg.fit_window or an.default_window(cfg.N1)
        fit = an.fit_decay(table, window)
        if "fit" in tasks:
            writer.write("fit.csv", an.fit_csv(fit))
            _say(f"fit: kappa_area = {fit.kappa_area:.6g}, kappa_perimeter = {fit.kappa_perimeter:.6g}, "
                 f"log W0 = {fit.log_w0:.6g}", stream)

    if "classify" in tasks:
        report = an.classify(fit, spectrum)
        extra = {}
        if cfg.z2 is not None:
            lc = an.local_criteria(tensor, cfg.J)
            extra = {
                "local_tau0_eigenvalues": lc.eigenvalues,
                "local_leading_degenerate": lc.leading_degenerate,
                "local_offdiag_weight": lc.offdiag_weight,
                "local_flux_singular_values": lc.flux_singular_values,
                "local_area_law_compatible": lc.area_law_compatible,
            }
        writer.write("phase_report.txt", an.report_text(report, extra))
        _say(f"classify: {report.label}", stream)

    if "thermo" in tasks:
        rows = []
        for a, b in cfg.loops:
            w = wilson_thermo(tensor, cfg.N1, a, b, J=cfg.J, ctx=ctx)
            if w.flag:
                _say(f"thermo: loop {a}x{b}: {w.flag}", stream)
                status = EXIT_NUMERIC
            rows.append((a, b, -w.log_abs if w.log_abs > -math.inf else math.inf))
        writer.write("thermo.csv", an._csv(["R1", "R2", "minus_log_abs_W"], rows))
        _say(f"thermo: {len(rows)} loops", stream)

    if "oracle-check" in tasks:
        if not _oracle_check(cfg, stream):
            status = EXIT_NUMERIC
    return status


def _oracle_check(cfg: ScenarioConfig, stream) -> bool:
    small = TorusSpec(cfg.oracle_N1, cfg.oracle_N2)
    state = build_state(cfg.tensor, small)
    ok = True
    ref, got = log_norm(state), norm(cfg.tensor, small)
    good = abs(math.expm1(got - ref)) <= ORACLE_RTOL
    ok &= good
    _say(f"oracle-check norm {small.N1}x{small.N2}: {'PASS' if good else 'FAIL'} "
         f"(engine {got:.15g}, oracle {ref:.15g})", stream)
    ctx = Contraction(cfg.tensor, small.N1)
    for a, b in cfg.loops:
        if not (a < small.N1 and b < small.N2):
            continue
        loop = LoopSpec(a, b, cfg.J)
        w_ref = direct_wilson(state, loop)
        w_got = complex(wilson_exact(cfg.tensor, small, loop, ctx=ctx))
        good = abs(w_got - w_ref) <= ORACLE_RTOL * max(abs(w_ref), 1e-300)
        ok &= good
        _say(f"oracle-check W({a},{b}): {'PASS' if good else 'FAIL'} "
             f"(engine {w_got:.15g}, oracle {w_ref:.15g})", stream)
    return ok


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gaugepeps", description=__doc__.split("\n\n")[0])
    parser.add_argument("config", nargs="?", help="scenario file (key = value lines)")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--threads", type=int, help="concurrent loop evaluations")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="start from a built-in scenario")
    args = parser.parse_args(argv)
    if args.config is None and args.preset is None:
        parser.error("give a config file, a --preset, or both")

    text = PRESETS[args.preset] if args.preset else ""
    base = None
    if args.config:
        try:
            user = Path(args.config).read_text()
        except OSError as exc:
            _say(f"config error: {exc}", sys.stderr)
            return EXIT_CONFIG
        base = Path(args.config).resolve().parent
        text = _merge(text, user)
    try:
        cfg = parse_config(text, base_dir=base)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            cfg.threads = args.threads
        if args.out:
            cfg.out = Path(args.out)
    except ConfigError as exc:
        _say(f"config error: {exc}", sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


def _merge(preset: str, user: str) -> str:
    # user lines first so error line numbers match the user's file
    keys = set()
    for line in user.splitlines():
        body = line.split("#", 1)[0]
        if "=" in body:
            keys.add(body.split("=", 1)[0].strip())
    kept = [l for l in preset.splitlines() if l.split("=", 1)[0].strip() not in keys]
    return "\n".join(user.splitlines() + kept) + "\n"


if __name__ == "__main__":
    sys.exit(main())
