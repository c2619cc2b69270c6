"""Experiment report serialization.

A report is JSON-lines: one config-echo line, then one line per completed
round. Lines are written as rounds finish (into a ``.partial`` file renamed
on success) so an interrupted run keeps its completed rounds. Serialization
is deterministic: sorted keys, no wall-clock fields.
"""

import csv
import dataclasses
import io
import json
import os
from pathlib import Path

from .data import ClassCatalog, ExperimentConfig
from .errors import IngestionError
from .orchestrator import QueryRoundRecord


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_echo(config: ExperimentConfig, catalog: ClassCatalog, strategy: str) -> dict:
    return {
        "type": "config",
        "strategy": strategy,
        "config": dataclasses.asdict(config),
        "optimizer": {"kind": "sgd", "momentum": 0.0},
        "catalog": {
            "id_class_names": list(catalog.id_class_names),
            "ood_class_names": list(catalog.ood_class_names),
            "task_description": catalog.task_description,
        },
    }


class ReportWriter:
    """Append-only JSONL writer with an atomic final rename."""

    def __init__(self, path):
        self.path = Path(path)
        self._partial = self.path.with_suffix(self.path.suffix + ".partial")
        self._file = open(self._partial, "w", encoding="utf-8")

    def write_header(self, header: dict) -> None:
        self._file.write(_dumps(header) + "\n")
        self._file.flush()

    def write_round(self, record: QueryRoundRecord) -> None:
        self._file.write(_dumps(record.to_json_dict()) + "\n")
        self._file.flush()

    def finish(self) -> None:
        self._file.close()
        os.replace(self._partial, self.path)

    def abort(self) -> None:
        if not self._file.closed:
            self._file.close()


def write_report(path, header: dict, records) -> None:
    writer = ReportWriter(path)
    writer.write_header(header)
    for record in records:
        writer.write_round(record)
    writer.finish()


def read_report(path) -> tuple[dict, list[QueryRoundRecord]]:
    header = None
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            if row.get("type") == "config":
                header = row
            elif row.get("type") == "round":
                records.append(QueryRoundRecord.from_json_dict(row))
            else:
                raise IngestionError(f"{path}:{lineno}: unknown line type {row.get('type')!r}")
    if header is None:
        raise IngestionError(f"{path}: missing config line")
    return header, records


CSV_COLUMNS = ("round", "strategy", "seed", "qp", "aqr", "macc")


def cell_text(value) -> str:
    if value is None:
        return ""
    return repr(value) if isinstance(value, float) else str(value)


def csv_rows(strategy: str, seed: int, records) -> list[list[str]]:
    rows = []
    for record in records:
        rows.append(
            [
                str(record.round),
                strategy,
                str(seed),
                cell_text(record.qp),
                cell_text(record.aqr),
                cell_text(record.macc),
            ]
        )
    return rows


def write_csv(path, rows) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerows(rows)
    _atomic_write_text(path, buffer.getvalue())


def report_to_csv_text(header: dict, records) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerows(
        csv_rows(header.get("strategy", ""), header.get("config", {}).get("seed", 0), records)
    )
    return buffer.getvalue()


def _fmt(value, digits=3) -> str:
    return "" if value is None else f"{value:.{digits}f}"


def report_to_markdown(header: dict, records) -> str:
    strategy = header.get("strategy", "?")
    seed = header.get("config", {}).get("seed", "?")
    lines = [
        f"# Experiment report: strategy={strategy} seed={seed}",
        "",
        "| round | queried | id_hits | ood_hits | qp | aqr | macc |",
        "|------:|--------:|--------:|---------:|---:|----:|-----:|",
    ]
    for r in records:
        lines.append(
            f"| {r.round} | {len(r.query_ids)} | {r.id_hits} | {r.ood_hits} "
            f"| {_fmt(r.qp)} | {_fmt(r.aqr)} | {_fmt(r.macc)} |"
        )
    return "\n".join(lines) + "\n"


def _atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".partial")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
