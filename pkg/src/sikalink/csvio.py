"""CSV ingestion and emission.

Input: header row, first column is the identifier, remaining columns are the
attributes. Identifiers are stripped of surrounding whitespace (exact-match
semantics otherwise; no case folding). Output is UTF-8, comma-separated,
double-quote escaped, LF-terminated; input tolerates CRLF.
"""

from __future__ import annotations

import csv
import json

from .outputs import JoinedOutput, Record
from .sika import InputError, IntersectionResult, ProviderOutput


def read_input_csv(path: str) -> tuple[list[str], list[Record]]:
    """Read (attribute column names, records). Raises InputError on bad rows."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if not header:
            raise InputError(f"{path}: empty header row")
        att_names = header[1:]
        records: list[Record] = []
        seen: dict[bytes, int] = {}
        dup_rows: list[str] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: {len(row)} columns, header has {len(header)}")
            raw = row[0].strip().encode()
            if not raw:
                raise InputError(f"{path}:{lineno}: empty identifier")
            if raw in seen:
                dup_rows.append(f"{seen[raw]}/{lineno}")
            else:
                seen[raw] = lineno
            records.append(Record(raw_id=raw, atts=tuple(row[1:])))
        if dup_rows:
            raise InputError(f"{path}: duplicate identifiers at rows {', '.join(dup_rows)}")
    return att_names, records


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_nyms_csv(path: str, records: list[Record], pout: ProviderOutput) -> None:
    """Local sidecar mapping real records to their pseudonym and key."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _writer(fh)
        w.writerow(["raw_id", "bnym_hex", "sk_hex"])
        for k, rec in enumerate(records):
            w.writerow([rec.raw_id.decode(errors="replace"),
                        pout.bnyms[k].tobytes().hex(),
                        pout.sks[k].tobytes().hex()])


def write_sika_csv(path: str, result: IntersectionResult, n: int) -> None:
    """Raw collector view: per provider, per entry, (bnym, p, sk)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _writer(fh)
        w.writerow(["provider", "bnym_hex", "p", "sk_hex"])
        for i in range(1, n + 1):
            for bnym, p, sk in result.entries(i):
                w.writerow([i, bnym.hex(), p if p is not None else "",
                            sk.hex() if sk is not None else ""])


def write_psi_csv(path: str, joined: JoinedOutput) -> None:
    """Plaintext intersection identifiers, one per rank."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _writer(fh)
        w.writerow(["p", "id"])
        for p, row in enumerate(joined.rows, start=1):
            ids = {tuple(cell) for cell in row if cell is not None}
            if len(ids) != 1:
                raise InputError(f"rank {p}: providers decrypted differing identifiers")
            w.writerow([p, next(iter(ids))[0]])


def write_joined_csv(path: str, joined: JoinedOutput, n: int) -> None:
    """Joined attribute table: one row per rank, provider columns prefixed P<i>_.

    A locked provider contributes a single column rendered as <locked>; its
    attribute count is unknowable by construction.
    """
    widths: list[int] = []
    for i in range(n):
        if i + 1 in joined.locked:
            widths.append(1)
        else:
            widths.append(max((len(r[i]) for r in joined.rows if r[i] is not None), default=0))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _writer(fh)
        header = ["p"]
        for i in range(n):
            if i + 1 in joined.locked:
                header.append(f"P{i + 1}_locked")
            else:
                header.extend(f"P{i + 1}_att{a + 1}" for a in range(widths[i]))
        w.writerow(header)
        for p, row in enumerate(joined.rows, start=1):
            line: list[str] = [str(p)]
            for i in range(n):
                if i + 1 in joined.locked:
                    line.append("<locked>")
                else:
                    cell = row[i] or []
                    line.extend(cell + [""] * (widths[i] - len(cell)))
            w.writerow(line)


def write_report_json(path: str, report: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
