import json
import os
import shutil
from datetime import datetime, timedelta, timezone

from django.core.management.base import BaseCommand

from macroreal.settings import RESULTS_ROOT


class Command(BaseCommand):
    help = "Remove experiment run folders whose manifest records a start older than the cutoff."

    def add_arguments(self, parser):
        parser.add_argument(
            "--older-than-days",
            type=int,
            default=30,
            help="Remove runs started more than this many days ago.",
        )
        parser.add_argument(
            "--command",
            dest="run_command",
            default=None,
            help="Only consider runs of this experiment command, e.g. lgi_scan.",
        )
        parser.add_argument(
            "--dry-run",
            action="store_true",
            help="Show what would be removed without deleting anything.",
        )

    def handle(self, *args, **options):
        dry_run = options["dry_run"]
        run_command = options["run_command"]
        cutoff = datetime.now(timezone.utc) - timedelta(days=options["older_than_days"])

        if not os.path.isdir(RESULTS_ROOT):
            self.stdout.write(self.style.WARNING(f"Results root does not exist: {RESULTS_ROOT}"))
            return

        removed = 0
        skipped = 0

        for name in sorted(os.listdir(RESULTS_ROOT)):
            path = os.path.join(RESULTS_ROOT, name)
            # the shared log file lives next to the run folders
            if not os.path.isdir(path):
                skipped += 1
                continue

            manifest = self._read_manifest(path)
            if manifest is None:
                self.stdout.write(self.style.WARNING(f"Skipping {path}: no readable run manifest"))
                skipped += 1
                continue
            if run_command is not None and manifest.get("command") != run_command:
                skipped += 1
                continue

            started = self._started(manifest)
            if started is None:
                self.stdout.write(self.style.WARNING(f"Skipping {path}: manifest has no valid start time"))
                skipped += 1
                continue
            if started > cutoff:
                skipped += 1
                continue

            if dry_run:
                self.stdout.write(f"Would remove {path} (started {started.isoformat()})")
            else:
                shutil.rmtree(path)
                self.stdout.write(f"Removed {path}")
            removed += 1

        action = "Would remove" if dry_run else "Removed"
        self.stdout.write(self.style.SUCCESS(f"{action} {removed} run folder(s); skipped {skipped}."))

    def _read_manifest(self, path):
        try:
            with open(os.path.join(path, "manifest.json"), "r", encoding="utf-8") as manifest_file:
                manifest = json.load(manifest_file)
        except (OSError, ValueError):
            return None
        return manifest if isinstance(manifest, dict) else None

    def _started(self, manifest):
        try:
            started = datetime.fromisoformat(manifest["started"])
        except (KeyError, TypeError, ValueError):
            return None
        if started.tzinfo is None:
            started = started.replace(tzinfo=timezone.utc)
        return started
