"""
MATPOWER case file (.m) parser.

Parses the matrix subset of the MATPOWER format used by the PGLib-OPF
distribution into a RawCase, converts it to a per-unit NetworkCase, and
writes a NetworkCase back to MATPOWER text.

Column indices used (0-based, MATPOWER manual tables B-1 to B-4):

    bus:     0 BUS_I, 1 BUS_TYPE (1 PQ, 2 PV, 3 ref, 4 isolated), 2 PD, 3 QD,
             4 GS, 5 BS, 6 BUS_AREA, 7 VM, 8 VA (deg), 9 BASE_KV, 10 ZONE,
             11 VMAX, 12 VMIN
    gen:     0 GEN_BUS, 1 PG, 2 QG, 3 QMAX, 4 QMIN, 5 VG, 6 MBASE,
             7 GEN_STATUS, 8 PMAX, 9 PMIN
    branch:  0 F_BUS, 1 T_BUS, 2 BR_R, 3 BR_X, 4 BR_B, 5 RATE_A, 6 RATE_B,
             7 RATE_C, 8 TAP (0 = nominal), 9 SHIFT (deg), 10 BR_STATUS
    gencost: 0 MODEL (1 piecewise linear, 2 polynomial), 1 STARTUP,
             2 SHUTDOWN, 3 NCOST, 4.. coefficients, highest order first

Power quantities are divided by baseMVA; impedances are already per unit.
Cost coefficients are rescaled so that cost is evaluated with p in per unit.
"""

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Tuple, Union

from services.network_model import Branch, Bus, CostCurve, Generator, NetworkCase
from utils.error_handler import (
    DuplicateBusId, MalformedRow, MissingTable, UnknownBusReference,
    UnsupportedBranch, UnsupportedCostModel
)

logger = logging.getLogger(__name__)

REQUIRED_TABLES = ('bus', 'gen', 'branch', 'gencost')
MIN_COLUMNS = {'bus': 13, 'gen': 10, 'branch': 11, 'gencost': 4}

_BASE_MVA = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;?")
_FUNCTION = re.compile(r"function\s+mpc\s*=\s*([\w.-]+)")
_TABLE_START = re.compile(r"mpc\.(\w+)\s*=\s*\[")


@dataclass
class RawCase:
    base_mva: float
    bus_rows: List[List[float]]
    gen_rows: List[List[float]]
    branch_rows: List[List[float]]
    gencost_rows: List[List[float]]
    name: str = ''
    line_numbers: Dict[str, List[int]] = field(default_factory=dict, repr=False, compare=False)


def _strip_comment(line: str) -> str:
    position = line.find('%')
    return line if position < 0 else line[:position]


def _extract_tables(text: str) -> Dict[str, List[Tuple[int, str]]]:
    """
    Collect the raw row strings of every ``mpc.<name> = [ ... ];`` block

    :param text: File content
    :return: Mapping of table name to (line number, row text) pairs
    """
    tables: Dict[str, List[Tuple[int, str]]] = {}
    current = None
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw_line).strip()
        if current is None:
            match = _TABLE_START.search(line)
            if not match:
                continue
            current = match.group(1)
            tables[current] = []
            line = line[match.end():]
        closing = line.find(']')
        body = line if closing < 0 else line[:closing]
        for chunk in body.split(';'):
            chunk = chunk.strip()
            if chunk:
                tables[current].append((number, chunk))
        if closing >= 0:
            current = None
    return tables


def _parse_rows(name: str, rows: List[Tuple[int, str]]) -> Tuple[List[List[float]], List[int]]:
    parsed, numbers = [], []
    for number, chunk in rows:
        fields = chunk.replace(',', ' ').split()
        try:
            values = [float(value) for value in fields]
        except ValueError as e:
            raise MalformedRow(name, number, str(e)) from e
        if len(values) < MIN_COLUMNS[name]:
            raise MalformedRow(
                name, number, f"expected at least {MIN_COLUMNS[name]} columns, got {len(values)}"
            )
        parsed.append(values)
        numbers.append(number)
    return parsed, numbers


def parse_case(text: str) -> RawCase:
    """
    Parse MATPOWER case text into raw tables

    :param text: Case file contents
    :return: RawCase with all tables populated
    :raises MissingTable: If baseMVA or a required table is absent
    :raises MalformedRow: If a row is not numeric or too short
    :raises DuplicateBusId: If two bus rows share an id
    """
    match = _BASE_MVA.search(text)
    if not match:
        raise MissingTable('baseMVA')
    base_mva = float(match.group(1))
    if base_mva <= 0:
        raise MalformedRow('baseMVA', text[:match.start()].count('\n') + 1, 'must be positive')

    name_match = _FUNCTION.search(text)
    tables = _extract_tables(text)

    parsed: Dict[str, List[List[float]]] = {}
    numbers: Dict[str, List[int]] = {}
    for table in REQUIRED_TABLES:
        if table not in tables:
            raise MissingTable(table)
        parsed[table], numbers[table] = _parse_rows(table, tables[table])

    seen = set()
    for row in parsed['bus']:
        bus_id = int(row[0])
        if bus_id in seen:
            raise DuplicateBusId(bus_id)
        seen.add(bus_id)
    for row in parsed['gen']:
        if int(row[0]) not in seen:
            raise UnknownBusReference('gen', int(row[0]))
    for row in parsed['branch']:
        for bus_id in (int(row[0]), int(row[1])):
            if bus_id not in seen:
                raise UnknownBusReference('branch', bus_id)

    return RawCase(
        base_mva=base_mva,
        bus_rows=parsed['bus'],
        gen_rows=parsed['gen'],
        branch_rows=parsed['branch'],
        gencost_rows=parsed['gencost'],
        name=name_match.group(1) if name_match else '',
        line_numbers=numbers,
    )


def read_case(path: Union[str, Path]) -> RawCase:
    """
    Read and parse a case file; the file stem is used when no function name is present
    """
    path = Path(path)
    raw = parse_case(path.read_text(encoding='utf-8'))
    if not raw.name:
        raw.name = path.stem
    return raw


def _cost_curve(row: List[float], position: int, base_mva: float) -> CostCurve:
    model = int(row[0])
    if model != 2:
        raise UnsupportedCostModel(position, f"model {model} (only polynomial model 2)")
    ncost = int(row[3])
    coefficients = row[4:4 + ncost]
    if len(coefficients) != ncost:
        raise UnsupportedCostModel(position, f"expected {ncost} coefficients")
    # leading zeros do not raise the degree
    while len(coefficients) > 3 and coefficients[0] == 0.0:
        coefficients = coefficients[1:]
    if len(coefficients) > 3:
        raise UnsupportedCostModel(position, f"polynomial of degree {len(coefficients) - 1}")
    c2, c1, c0 = ([0.0] * (3 - len(coefficients))) + list(coefficients)
    return CostCurve(c2=c2 * base_mva ** 2, c1=c1 * base_mva, c0=c0)


def to_network(raw: RawCase) -> NetworkCase:
    """
    Convert raw tables to a per-unit NetworkCase

    Out-of-service branches and generators are dropped, a zero rating
    becomes an unlimited branch and a zero tap becomes the nominal tap 1.

    :param raw: Parsed case
    :return: Validated NetworkCase
    """
    base = raw.base_mva

    buses = []
    for row in sorted(raw.bus_rows, key=lambda r: int(r[0])):
        bus_type = int(row[1])
        buses.append(Bus(
            id=int(row[0]),
            load_nominal=complex(row[2], row[3]) / base,
            shunt=complex(row[4], row[5]) / base,
            v_min=row[12],
            v_max=row[11],
            is_reference=bus_type == 3,
            bus_type=bus_type,
            vm0=row[7],
            va0=row[8],
            base_kv=row[9],
        ))

    if len(raw.gencost_rows) == 2 * len(raw.gen_rows) and raw.gen_rows:
        logger.warning(f"{raw.name}: ignoring reactive power cost rows")
    elif len(raw.gencost_rows) != len(raw.gen_rows):
        raise UnsupportedCostModel(
            0, f"{len(raw.gencost_rows)} gencost rows for {len(raw.gen_rows)} generators"
        )

    generators = []
    for position, (row, cost_row) in enumerate(zip(raw.gen_rows, raw.gencost_rows), start=1):
        if row[7] <= 0:
            continue
        generators.append(Generator(
            id=position,
            bus=int(row[0]),
            p_min=row[9] / base,
            p_max=row[8] / base,
            q_min=row[4] / base,
            q_max=row[3] / base,
            cost=_cost_curve(cost_row, position, base),
            v_setpoint=row[5],
            p0=row[1] / base,
            q0=row[2] / base,
        ))

    branches = []
    dropped = 0
    for position, row in enumerate(raw.branch_rows, start=1):
        if row[10] <= 0:
            dropped += 1
            continue
        if row[9] != 0.0:
            raise UnsupportedBranch(position, f"phase shift {row[9]} deg")
        if row[2] == 0.0 and row[3] == 0.0:
            raise UnsupportedBranch(position, "zero series impedance")
        branches.append(Branch(
            id=position,
            from_bus=int(row[0]),
            to_bus=int(row[1]),
            r=row[2],
            x=row[3],
            charging=row[4],
            tap=row[8] if row[8] != 0.0 else 1.0,
            rate=row[5] / base if row[5] > 0 else None,
        ))
    if dropped:
        logger.info(f"{raw.name}: dropped {dropped} out-of-service branch(es)")

    case = NetworkCase(
        name=raw.name,
        base_mva=base,
        buses=tuple(buses),
        generators=tuple(generators),
        branches=tuple(branches),
    )
    case.validate()
    logger.debug(
        f"Loaded {case.name}: {case.num_buses} buses, {len(case.generators)} generators, "
        f"{len(case.branches)} branches ({len(case.limited_branches)} rated)"
    )
    return case


def load_case(path: Union[str, Path]) -> NetworkCase:
    """
    Read a MATPOWER file and convert it to a NetworkCase
    """
    return to_network(read_case(path))


def _fmt(value: float) -> str:
    return repr(float(value))


def emit_case(case: NetworkCase) -> str:
    """
    Write a NetworkCase as MATPOWER text that parses back to an equal case

    :param case: Network case
    :return: MATPOWER file contents
    """
    base = case.base_mva
    lines = [f"function mpc = {case.name or 'case'}", "mpc.version = '2';",
             f"mpc.baseMVA = {_fmt(base)};", "", "mpc.bus = ["]
    for bus in case.buses:
        bus_type = 3 if bus.is_reference else (bus.bus_type if bus.bus_type != 3 else 2)
        fields = [bus.id, bus_type, bus.load_nominal.real * base, bus.load_nominal.imag * base,
                  bus.shunt.real * base, bus.shunt.imag * base, 1, bus.vm0, bus.va0,
                  bus.base_kv, 1, bus.v_max, bus.v_min]
        lines.append("\t" + "\t".join(_fmt(v) for v in fields) + ";")
    lines += ["];", "", "mpc.gen = ["]
    for gen in case.generators:
        fields = [gen.bus, gen.p0 * base, gen.q0 * base, gen.q_max * base, gen.q_min * base,
                  gen.v_setpoint, base, 1, gen.p_max * base, gen.p_min * base]
        lines.append("\t" + "\t".join(_fmt(v) for v in fields) + ";")
    lines += ["];", "", "mpc.gencost = ["]
    for gen in case.generators:
        fields = [2, 0, 0, 3, gen.cost.c2 / base ** 2, gen.cost.c1 / base, gen.cost.c0]
        lines.append("\t" + "\t".join(_fmt(v) for v in fields) + ";")
    lines += ["];", "", "mpc.branch = ["]
    for branch in case.branches:
        rate = branch.rate * base if branch.is_limited else 0.0
        tap = 0.0 if branch.tap == 1.0 else branch.tap
        fields = [branch.from_bus, branch.to_bus, branch.r, branch.x, branch.charging,
                  rate, rate, rate, tap, 0, 1, -360, 360]
        lines.append("\t" + "\t".join(_fmt(v) for v in fields) + ";")
    lines += ["];", ""]
    return "\n".join(lines)


__all__ = ['RawCase', 'parse_case', 'read_case', 'to_network', 'load_case', 'emit_case']
