"""Build a demo transmitter mailbox (multi-part station mail, an archive
mail, and an unrelated message), then ingest it into canonical CSVs.

Usage: python scripts/make_demo_mailbox.py [workdir]
"""

from __future__ import annotations

import gzip
import io
import sys
import tarfile
import tempfile
from pathlib import Path

from trackwatch.ingest import ingest_mailbox


def write_message(path: Path, subject: str, date: str, body: str, attachment: str | None = None):
    headers = [f"Subject: {subject}", f"Date: {date}", "To: transmitter-ops@example.org"]
    if attachment:
        headers.append(f"Attachment: {attachment}")
    path.write_text("\n".join(headers) + "\n\n" + body + "\n")


def main() -> int:
    workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="tw-mail-"))
    mailbox = workdir / "mailbox"
    mailbox.mkdir(parents=True, exist_ok=True)

    header = "datetime,dss,forward_power,reverse_power,drive_power,exciter_power,gain_slope,running_time"
    lines = [
        f"2025-02-24T13:02:{26 + i:02d}.000000Z,63,{-0.00027 - i * 1e-6:.6f},-0.000007,"
        f"{0.0009 + i * 1e-6:.7f},{0.00527 + i * 1e-6:.6f},0.0,{float(i)}"
        for i in range(30)
    ]
    write_message(
        mailbox / "part1.msg",
        "DSS-63 X-sx20 transmitter data part 1 of 2",
        "2025-02-24T14:00:00Z",
        "\n".join([header] + lines[:15]),
    )
    write_message(
        mailbox / "part2.msg",
        "DSS-63 X-sx20 transmitter data part 2 of 2",
        "2025-02-24T14:00:05Z",
        "\n".join(lines[15:]),
    )

    csv_rows = ["timestamp,dss,fwd_pwr_kw,body_current,equipment"]
    csv_rows += [
        f"2025-02-24T13:00:{i:02d}Z,43,{19.4 + 0.01 * i:.2f},{0.012 + 0.0001 * i:.4f},Agilent"
        for i in range(30)
    ]
    tar_buf = io.BytesIO()
    with tarfile.open(fileobj=tar_buf, mode="w") as tar:
        payload = ("\n".join(csv_rows) + "\n").encode()
        info = tarfile.TarInfo("day055.csv")
        info.size = len(payload)
        tar.addfile(info, io.BytesIO(payload))
    (mailbox / "day055.tar.gz").write_bytes(gzip.compress(tar_buf.getvalue()))
    write_message(
        mailbox / "cec.msg",
        "DSS-43 CEC transmitter daily export",
        "2025-02-24T16:00:00Z",
        "Daily archive attached.",
        attachment="day055.tar.gz",
    )
    write_message(
        mailbox / "status.msg", "weekly status", "2025-02-25T09:00:00Z", "All nominal."
    )

    out = workdir / "canonical"
    summary = ingest_mailbox(mailbox, out)
    print(f"mailbox: {mailbox}")
    for name, rows in sorted(summary.files_written.items()):
        print(f"wrote {out / name} ({rows} records)")
    for label, report in sorted(summary.reports.items()):
        print(f"  {label}: parsed {report.rows_parsed}, rejected {report.rows_rejected}, "
              f"extra columns {report.columns_extra}")
    print(f"unclassified: {summary.unknown_messages}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
