"""CSV tables with a provenance line, and gnuplot scripts referencing them."""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Mapping, Sequence


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    if hasattr(v, "item"):  # numpy scalar
        return _fmt(v.item())
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Mapping], config_hash: str) -> Path:
    """``# config <hash>`` line, header row, then one line per row (floats in ``repr`` form)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write(f"# config {config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(row[k]) for k in header])
    path.write_text(buf.getvalue())
    return path


def read_csv(path) -> tuple[str, list[dict]]:
    """Config hash and rows; numeric-looking cells are converted to float."""
    lines = Path(path).read_text().splitlines()
    chash = ""
    body = []
    for line in lines:
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "config":
                chash = parts[1]
            continue
        body.append(line)
    rows = []
    for rec in csv.DictReader(body):
        out = {}
        for k, v in rec.items():
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
        rows.append(out)
    return chash, rows


def gnuplot_script(path, csv_name: str, title: str, xlabel: str, ylabel: str,
                   series: Sequence[tuple[str, str]], logy: bool = True, logx: bool = False) -> Path:
    """Plot columns ``(x_expr, y_expr)`` of ``csv_name``; each series is ``(using, legend)``."""
    path = Path(path)
    lines = [
        "set datafile separator ','",
        "set datafile commentschars '#'",
        "set key autotitle columnhead",
        f"set title '{title}'",
        f"set xlabel '{xlabel}'",
        f"set ylabel '{ylabel}'",
        "set grid",
    ]
    if logy:
        lines.append("set logscale y")
    if logx:
        lines.append("set logscale x")
    lines.append(f"set terminal pngcairo size 900,600\nset output '{Path(csv_name).stem}.png'")
    plots = [f"'{csv_name}' using {using} with linespoints title '{legend}'" for using, legend in series]
    lines.append("plot " + ", \\\n     ".join(plots))
    path.write_text("\n".join(lines) + "\n")
    return path
