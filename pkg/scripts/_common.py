import json
import logging
import sys
from pathlib import Path


def dump(report: dict, out: str | None) -> None:
    """Print the JSON-able part of a report and optionally save it."""
    clean = {k: v for k, v in report.items() if isinstance(v, (int, float, str, bool, dict, type(None)))}
    text = json.dumps(clean, indent=1)
    print(text)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")


def progress(every: int):
    log = logging.getLogger("experiment")
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(asctime)s %(message)s")

    def on_record(rec):
        if rec["step"] % every == 0:
            log.info(json.dumps(rec))

    return on_record
