import csv
import io
import json
import logging
import os
import tempfile
import time
from datetime import datetime, timezone

import numpy as np
from pathvalidate import sanitize_filename

from macroreal.settings import LOG_LEVEL, MACROREAL_VERSION, RESULTS_ROOT


def configure_lab_logger():
    lab_logger = logging.getLogger("Macroreal")
    lab_logger.setLevel(logging.DEBUG)

    if getattr(lab_logger, "_macroreal_configured", False):
        return lab_logger

    console_handler = logging.StreamHandler()
    os.makedirs(RESULTS_ROOT, exist_ok=True)
    file_handler = logging.FileHandler(os.path.join(RESULTS_ROOT, "macroreal.log"))
    console_handler.setLevel(getattr(logging, LOG_LEVEL, logging.INFO))
    file_handler.setLevel(logging.INFO)
    console_format = logging.Formatter("Ln %(lineno)d - %(message)s")
    file_format = logging.Formatter("%(asctime)s - %(levelname)s - %(message)s")
    console_handler.setFormatter(console_format)
    file_handler.setFormatter(file_format)
    lab_logger.addHandler(console_handler)
    lab_logger.addHandler(file_handler)
    lab_logger._macroreal_configured = True
    return lab_logger


logger = configure_lab_logger()


def remove_file_quietly(path):
    try:
        os.remove(path)
    except OSError:
        pass


def write_text_file_atomic(path, content):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with tempfile.NamedTemporaryFile(
        "w",
        encoding="utf-8",
        dir=os.path.dirname(path),
        delete=False,
        newline="",
    ) as temp_file:
        temp_file.write(content)
        temp_path = temp_file.name
    try:
        os.replace(temp_path, path)
    except OSError:
        remove_file_quietly(temp_path)
        raise


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serialisable")


def write_json_file_atomic(path, data):
    write_text_file_atomic(path, json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")


def _csv_cell(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv_file_atomic(path, header, rows):
    """Header row, fixed column order, floats as shortest round-trip decimals."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        if isinstance(row, dict):
            row = [row[column] for column in header]
        writer.writerow([_csv_cell(value) for value in row])
    write_text_file_atomic(path, buffer.getvalue())


def output_path(run_dir, filename):
    safe_filename = sanitize_filename(os.path.basename(filename))
    if not safe_filename:
        raise ValueError(f"Output file name {filename!r} is empty after sanitising")
    return os.path.join(run_dir, safe_filename)


def run_directory(command, out=None, root=RESULTS_ROOT):
    """The --out directory if given, else a fresh timestamped folder under the results root."""
    if out:
        path = os.path.abspath(out)
    else:
        stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
        path = os.path.join(root, sanitize_filename(f"{command}-{stamp}"))
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        logger.error(f"Could not create run directory {path}: {e}")
        raise
    return path


class RunManifest(object):

    logger = logging.getLogger("Macroreal")

    def __init__(self, command, config, preset=None):
        self.command = command
        self.preset = preset
        self.config = config
        self.started = datetime.now(timezone.utc).isoformat()
        self._clock = time.perf_counter()
        self.outputs = []
        self.checks = []

    def add_output(self, path):
        self.outputs.append(os.path.basename(path))

    def add_check(self, name, value, threshold, passed):
        check = {"name": name, "value": value, "threshold": threshold, "passed": bool(passed)}
        self.checks.append(check)
        level = logging.INFO if passed else logging.WARNING
        self.logger.log(level, "Check %s: value=%r threshold=%r -> %s", name, value, threshold,
                        "pass" if passed else "FAIL")
        return check

    def failed_checks(self):
        return [check["name"] for check in self.checks if not check["passed"]]

    def to_dict(self):
        return {
            "command": self.command,
            "preset": self.preset,
            "config": self.config,
            "version": MACROREAL_VERSION,
            "started": self.started,
            "duration_seconds": time.perf_counter() - self._clock,
            "outputs": list(self.outputs),
            "checks": list(self.checks),
            "passed": not self.failed_checks(),
        }

    def write(self, run_dir):
        path = os.path.join(run_dir, "manifest.json")
        write_json_file_atomic(path, self.to_dict())
        self.logger.info(f"Wrote manifest {path}")
        return path
