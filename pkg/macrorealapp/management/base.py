from django import forms
from django.core.management.base import BaseCommand, CommandError

from lib.spinCore import ContractViolation
from macrorealapp.experiments import presets_for, run_experiment

CONFIG_ERROR = 1
CONTRACT_ERROR = 2


class ExperimentCommand(BaseCommand):
    """Shared flags and exit-code handling for the experiment commands."""

    experiment = None

    def add_arguments(self, parser):
        parser.add_argument("--config", help="JSON config file; overrides the preset field by field.")
        parser.add_argument(
            "--preset",
            choices=presets_for(self.experiment) or None,
            help="Named configuration to start from.",
        )
        parser.add_argument("--out", help="Output directory (default: a new folder under the results root).")
        parser.add_argument("--oversample", type=int, help="Sphere grid oversampling factor.")
        parser.add_argument("--threads", type=int, help="Worker threads for parameter scans.")
        parser.add_argument("--seed", type=int, help="Reserved; the default paths are deterministic.")

    def handle(self, *args, **options):
        overrides = {
            key: options[key] for key in ("oversample", "threads", "seed") if options.get(key) is not None
        }
        try:
            manifest, run_dir = run_experiment(
                self.experiment,
                preset=options.get("preset"),
                config_path=options.get("config"),
                overrides=overrides,
                out=options.get("out"),
            )
        except ContractViolation as e:
            raise CommandError(f"Numerical contract violated: {e}", returncode=CONTRACT_ERROR)
        except forms.ValidationError as e:
            raise CommandError(f"Invalid configuration: {' '.join(e.messages)}", returncode=CONFIG_ERROR)
        except (ValueError, OSError) as e:
            raise CommandError(f"{self.experiment} failed: {e}", returncode=CONFIG_ERROR)

        for name in manifest.outputs:
            self.stdout.write(f"Wrote {name}")
        failed = manifest.failed_checks()
        if failed:
            raise CommandError(f"Failed checks: {', '.join(failed)} (see {run_dir})", returncode=CONTRACT_ERROR)
        self.stdout.write(self.style.SUCCESS(
            f"{self.experiment} finished in {run_dir}; {len(manifest.checks)} check(s) passed."
        ))
