"""On-disk formats: case files, run configs, model files, and CSV tables.

Case and config files share one sectioned-text syntax: ``[section]``
headers, ``#`` comments, and either whitespace-separated table rows or
``key = value`` pairs.  Model files store coefficients with 17 significant
digits, which round-trips doubles exactly.

CSV schemas
  admittance   f_hz,row,col,re_siemens,im_siemens
  timeseries   t,<channel>...
  participation  gen,<one column per mode>
  grouping     gen,group,localness
  passivity    f_hz,min_eig,violated
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from .coherency import CoherentGrouping
from .emt_sim import TimeSeries
from .netmodel import (AdmittanceSampleSet, Branch, Bus, CaseError,
                       Generator, NetworkCase, PowerFlowSpec, Source)
from .rls_ident import RationalTFz, TFMatrix


class FormatError(ValueError):
    """Unparseable file content."""


FLOAT_FMT = "%.17g"


def _fmt(x: float) -> str:
    return FLOAT_FMT % float(x)


# ---------------------------------------------------------------------------
# sectioned text


def parse_sections(text: str) -> dict[str, list[str]]:
    """Split sectioned text into {section: [payload lines]}."""
    sections: dict[str, list[str]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise FormatError(f"line {lineno}: malformed section header "
                                  f"{raw.strip()!r}")
            current = line[1:-1].strip().lower()
            sections.setdefault(current, [])
            continue
        if current is None:
            raise FormatError(f"line {lineno}: content before any section")
        sections[current].append(line)
    return sections


def parse_kv(lines: list[str], section: str) -> dict[str, str]:
    out = {}
    for line in lines:
        if "=" not in line:
            raise FormatError(f"[{section}]: expected key = value, "
                              f"got {line!r}")
        key, val = line.split("=", 1)
        out[key.strip().lower()] = val.strip()
    return out


# ---------------------------------------------------------------------------
# case files


def loads_case(text: str) -> NetworkCase:
    sec = parse_sections(text)
    if "buses" not in sec:
        raise FormatError("case file has no [buses] section")

    meta = parse_kv(sec.get("case", []), "case")
    buses = []
    for line in sec["buses"]:
        parts = line.split()
        if len(parts) not in (2, 3):
            raise FormatError(f"[buses]: expected 'id kind [area]', "
                              f"got {line!r}")
        area = parts[2] if len(parts) == 3 else "study"
        buses.append(Bus(id=int(parts[0]), kind=parts[1], area=area))

    branches = []
    for line in sec.get("branches", []):
        parts = line.split()
        if len(parts) != 6:
            raise FormatError(f"[branches]: expected "
                              f"'from to r l c model', got {line!r}")
        branches.append(Branch(from_bus=int(parts[0]), to_bus=int(parts[1]),
                               r=float(parts[2]), l=float(parts[3]),
                               c=float(parts[4]), model=parts[5]))

    sources = []
    for line in sec.get("sources", []):
        parts = line.split()
        if len(parts) != 5:
            raise FormatError(f"[sources]: expected "
                              f"'bus kind mag phase_deg freq', got {line!r}")
        sources.append(Source(bus=int(parts[0]), kind=parts[1],
                              mag=float(parts[2]),
                              phase=math.radians(float(parts[3])),
                              freq=float(parts[4])))

    gens = []
    for line in sec.get("generators", []):
        parts = line.split()
        if len(parts) != 8:
            raise FormatError(f"[generators]: expected 'id bus h d xd_prime "
                              f"r_stator p_set v_set', got {line!r}")
        gens.append(Generator(id=int(parts[0]), bus=int(parts[1]),
                              h=float(parts[2]), d=float(parts[3]),
                              xd_prime=float(parts[4]),
                              r_stator=float(parts[5]),
                              p_set=float(parts[6]), v_set=float(parts[7])))

    pf = None
    if "powerflow" in sec:
        kv = parse_kv(sec["powerflow"], "powerflow")
        if "slack" not in kv:
            raise FormatError("[powerflow] needs a slack bus")
        pf = PowerFlowSpec(slack_bus=int(kv["slack"]),
                           s_base=float(kv.get("s_base", "1.0")),
                           tol=float(kv.get("tol", "1e-10")),
                           max_iter=int(kv.get("max_iter", "40")))

    try:
        return NetworkCase(buses=buses, branches=branches, sources=sources,
                           generators=gens, powerflow=pf,
                           f_nominal=float(meta.get("f_nominal", "60")),
                           name=meta.get("name", ""))
    except CaseError as exc:
        raise FormatError(f"inconsistent case: {exc}") from exc


def load_case(path) -> NetworkCase:
    return loads_case(Path(path).read_text())


def dumps_case(case: NetworkCase) -> str:
    out = ["[case]"]
    if case.name:
        out.append(f"name = {case.name}")
    out.append(f"f_nominal = {_fmt(case.f_nominal)}")
    out += ["", "[buses]", "# id kind area"]
    for b in sorted(case.buses, key=lambda b: b.id):
        out.append(f"{b.id} {b.kind} {b.area}")
    out += ["", "[branches]", "# from to r l c model"]
    for br in case.branches:
        out.append(f"{br.from_bus} {br.to_bus} {_fmt(br.r)} {_fmt(br.l)} "
                   f"{_fmt(br.c)} {br.model}")
    if case.sources:
        out += ["", "[sources]", "# bus kind mag phase_deg freq"]
        for s in case.sources:
            out.append(f"{s.bus} {s.kind} {_fmt(s.mag)} "
                       f"{_fmt(math.degrees(s.phase))} {_fmt(s.freq)}")
    if case.generators:
        out += ["", "[generators]",
                "# id bus h d xd_prime r_stator p_set v_set"]
        for g in case.generators:
            out.append(f"{g.id} {g.bus} {_fmt(g.h)} {_fmt(g.d)} "
                       f"{_fmt(g.xd_prime)} {_fmt(g.r_stator)} "
                       f"{_fmt(g.p_set)} {_fmt(g.v_set)}")
    if case.powerflow is not None:
        pf = case.powerflow
        out += ["", "[powerflow]", f"slack = {pf.slack_bus}",
                f"s_base = {_fmt(pf.s_base)}", f"tol = {_fmt(pf.tol)}",
                f"max_iter = {pf.max_iter}"]
    return "\n".join(out) + "\n"


def save_case(case: NetworkCase, path) -> None:
    Path(path).write_text(dumps_case(case))


# ---------------------------------------------------------------------------
# admittance sample CSV


def save_admittance_csv(samples: AdmittanceSampleSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["f_hz", "row", "col", "re_siemens", "im_siemens"])
        m = samples.n_ports
        for k, f in enumerate(samples.f_hz):
            for q in range(m):
                for p in range(m):
                    y = samples.y[k, q, p]
                    w.writerow([_fmt(f), q, p, _fmt(y.real), _fmt(y.imag)])


def load_admittance_csv(path, ports=(), ts=None) -> AdmittanceSampleSet:
    rows = []
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        need = {"f_hz", "row", "col", "re_siemens", "im_siemens"}
        if rd.fieldnames is None or not need <= set(rd.fieldnames):
            raise FormatError(f"admittance CSV must have columns {sorted(need)}")
        for row in rd:
            rows.append((float(row["f_hz"]), int(row["row"]),
                         int(row["col"]),
                         complex(float(row["re_siemens"]),
                                 float(row["im_siemens"]))))
    if not rows:
        raise FormatError("admittance CSV is empty")
    m = max(r[1] for r in rows) + 1
    freqs = sorted({r[0] for r in rows})
    fpos = {f: k for k, f in enumerate(freqs)}
    y = np.zeros((len(freqs), m, m), dtype=complex)
    seen = np.zeros((len(freqs), m, m), dtype=bool)
    for f, q, p, val in rows:
        y[fpos[f], q, p] = val
        seen[fpos[f], q, p] = True
    if not seen.all():
        raise FormatError("admittance CSV has missing (f, row, col) entries")
    return AdmittanceSampleSet(f_hz=np.array(freqs), y=y,
                               ports=tuple(ports) or tuple(range(m)), ts=ts)


# ---------------------------------------------------------------------------
# time series CSV


def save_timeseries_csv(series: TimeSeries, path) -> None:
    names = sorted(series.channels)
    t = series.time()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + names)
        for k in range(len(series)):
            w.writerow([_fmt(t[k])] +
                       [_fmt(series.channels[c][k]) for c in names])


def load_timeseries_csv(path) -> TimeSeries:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if not header or header[0] != "t":
            raise FormatError("timeseries CSV must start with a t column")
        names = header[1:]
        cols = [[] for _ in header]
        for row in rd:
            for j, cell in enumerate(row):
                cols[j].append(float(cell))
    t = np.array(cols[0])
    if len(t) < 2:
        raise FormatError("timeseries CSV needs at least two samples")
    ts = float(t[1] - t[0])
    channels = {name: np.array(cols[j + 1]) for j, name in enumerate(names)}
    return TimeSeries(ts=ts, channels=channels, t0=float(t[0]))


# ---------------------------------------------------------------------------
# participation / grouping CSV


def load_participation_csv(path):
    """Returns (P matrix, generator ids, mode labels)."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if not header or header[0].lower() != "gen":
            raise FormatError("participation CSV must start with a gen column")
        modes = header[1:]
        gens, rows = [], []
        for row in rd:
            if not row:
                continue
            gens.append(int(row[0]))
            rows.append([float(x) for x in row[1:]])
    if not rows:
        raise FormatError("participation CSV is empty")
    return np.array(rows), gens, modes


def save_participation_csv(p, gen_ids, path, modes=None) -> None:
    p = np.asarray(p, dtype=float)
    modes = modes or [f"mode_{j + 1}" for j in range(p.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gen"] + list(modes))
        for gid, row in zip(gen_ids, p):
            w.writerow([gid] + [_fmt(x) for x in row])


def save_grouping_csv(grouping: CoherentGrouping, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gen", "group", "localness"])
        for k, members in enumerate(grouping.groups, start=1):
            for gid in members:
                w.writerow([gid, k, _fmt(grouping.localness[gid])])


# ---------------------------------------------------------------------------
# model files


def dumps_model(tfm: TFMatrix) -> str:
    out = ["# rational port admittance model",
           f"m {tfm.m} nmax {tfm.max_order} ts {_fmt(tfm.ts)}",
           "ports " + " ".join(str(p) for p in tfm.ports)]
    for q in range(tfm.m):
        for p in range(tfm.m):
            e = tfm.entries[q][p]
            out.append(f"entry {q} {p} n {e.n} b0 {_fmt(e.b0)}")
            out.append("a " + " ".join(_fmt(x) for x in e.a))
            out.append("b " + " ".join(_fmt(x) for x in e.b))
    return "\n".join(out) + "\n"


def loads_model(text: str) -> TFMatrix:
    lines = [ln.strip() for ln in text.splitlines()
             if ln.strip() and not ln.strip().startswith("#")]
    if not lines or not lines[0].startswith("m "):
        raise FormatError("model file must open with 'm <m> nmax <n> ts <ts>'")
    head = lines[0].split()
    try:
        m, ts = int(head[1]), float(head[5])
    except (IndexError, ValueError) as exc:
        raise FormatError(f"bad model header {lines[0]!r}") from exc
    if len(lines) < 2 or not lines[1].startswith("ports"):
        raise FormatError("model file missing ports line")
    ports = tuple(int(x) for x in lines[1].split()[1:])
    if len(ports) != m:
        raise FormatError(f"header says {m} ports, got {len(ports)}")

    entries = [[None] * m for _ in range(m)]
    k = 2
    while k < len(lines):
        parts = lines[k].split()
        if parts[0] != "entry" or len(parts) != 7:
            raise FormatError(f"expected entry line, got {lines[k]!r}")
        q, p, n, b0 = int(parts[1]), int(parts[2]), int(parts[4]), \
            float(parts[6])
        if k + 2 >= len(lines):
            raise FormatError(f"entry ({q},{p}) truncated")
        a_line, b_line = lines[k + 1].split(), lines[k + 2].split()
        if a_line[0] != "a" or b_line[0] != "b":
            raise FormatError(f"entry ({q},{p}) missing a/b rows")
        a = [float(x) for x in a_line[1:]]
        b = [float(x) for x in b_line[1:]]
        if len(a) != n or len(b) != n:
            raise FormatError(f"entry ({q},{p}) expects {n} coefficients")
        entries[q][p] = RationalTFz(a=np.array(a) if a else np.zeros(0),
                                    b=np.array(b) if b else np.zeros(0),
                                    ts=ts, b0=b0)
        k += 3
    holes = [(q, p) for q in range(m) for p in range(m)
             if entries[q][p] is None]
    if holes:
        raise FormatError(f"model file missing entries {holes}")
    return TFMatrix(entries=entries, ports=ports)


def save_model(tfm: TFMatrix, path) -> None:
    Path(path).write_text(dumps_model(tfm))


def load_model(path) -> TFMatrix:
    return loads_model(Path(path).read_text())


# ---------------------------------------------------------------------------
# passivity report CSV


def save_passivity_csv(report, path) -> None:
    bad = set(report.violations.tolist())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["f_hz", "min_eig", "violated"])
        for k in range(len(report.f_hz)):
            w.writerow([_fmt(report.f_hz[k]), _fmt(report.min_eig[k]),
                        int(k in bad)])
