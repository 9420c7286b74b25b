import logging
from pathlib import Path
from typing import Optional

from django.core.management.base import BaseCommand, CommandError, CommandParser
from django.utils import timezone

from macrates.config import load_scenario
from macrates.exceptions import ConfigurationError, MacRatesError
from macrates.forms import SCENARIOS
from macrates.models import SimulationRun
from macrates.services import run_scenario

logger = logging.getLogger(__name__)

CONFIG_ERROR = 1
RUNTIME_ERROR = 2


def parse_seed(value: Optional[str]) -> Optional[int]:
    """An unsigned 64-bit seed from its decimal text, or None when the option is absent."""
    if value is None:
        return None
    try:
        seed = int(value)
    except ValueError:
        raise CommandError(f"--seed must be an integer, got {value!r}", returncode=CONFIG_ERROR)
    if not 0 <= seed < 2**64:
        raise CommandError(f"--seed must lie in [0, 2**64), got {value}", returncode=CONFIG_ERROR)
    return seed


class Command(BaseCommand):
    help = "Runs a multiple-access rate-allocation scenario and writes its CSV results."

    def add_arguments(self, parser: CommandParser) -> None:
        parser.add_argument(
            "--scenario",
            required=True,
            choices=SCENARIOS,
            help="The experiment to run.",
        )
        parser.add_argument(
            "--config",
            required=True,
            type=Path,
            help="Path to the TOML scenario file.",
        )
        parser.add_argument(
            "--out",
            required=True,
            type=Path,
            help="Directory the CSV files are written to (created if missing).",
        )
        parser.add_argument(
            "--seed",
            type=str,
            default=None,
            help="Unsigned 64-bit root seed. Overrides [scenario].seed.",
        )
        parser.add_argument(
            "--replications",
            type=int,
            default=None,
            help="Number of independent replications. Overrides [scenario].replications.",
        )
        parser.add_argument(
            "--slots",
            type=int,
            default=None,
            help="Slots per run. Overrides [scenario].slots.",
        )
        parser.add_argument(
            "--workers",
            type=int,
            default=1,
            help="Replications simulated concurrently. Output does not depend on it.",
        )

    def handle(self, *args, **options) -> None:
        scenario: str = options["scenario"]
        config_path: Path = options["config"]
        out_dir: Path = options["out"]

        for name in ("replications", "slots", "workers"):
            if options[name] is not None and options[name] < 1:
                raise CommandError(f"--{name} must be at least 1", returncode=CONFIG_ERROR)
        options["seed"] = parse_seed(options["seed"])

        run = SimulationRun.objects.create(
            scenario=scenario,
            config_path=str(config_path),
            seed=str(options["seed"]) if options["seed"] is not None else "",
            replications=options["replications"] or 1,
            slots=options["slots"],
            output_dir=str(out_dir),
        )

        try:
            config = load_scenario(
                config_path,
                scenario,
                seed=options["seed"],
                replications=options["replications"],
                slots=options["slots"],
            )
        except ConfigurationError as e:
            for message in e.errors:
                logger.error(f"Configuration error: {message}")
            self._fail(run, str(e))
            raise CommandError(f"Invalid configuration: {e}", returncode=CONFIG_ERROR)

        run.seed = str(config.seed)
        run.replications = config.replications
        run.slots = config.slots if scenario != "file_upload" else None
        run.save(update_fields=["seed", "replications", "slots"])

        try:
            metrics = run_scenario(config, out_dir, workers=options["workers"])
        except ConfigurationError as e:
            logger.error(f"Configuration error: {e}")
            self._fail(run, str(e))
            raise CommandError(f"Invalid configuration: {e}", returncode=CONFIG_ERROR)
        except MacRatesError as e:
            diagnostics = getattr(e, "diagnostics", None)
            logger.critical(f"A runtime error occurred during the {scenario} run: {e} {diagnostics or ''}")
            self._fail(run, str(e))
            raise CommandError(f"A runtime error occurred: {e}", returncode=RUNTIME_ERROR)

        run.status = SimulationRun.Status.SUCCEEDED
        run.csv_path = str(metrics.csv_path)
        run.summary = metrics.summary()
        run.finished_at = timezone.now()
        run.save()

        logger.info("--- Run Summary ---")
        for key, value in run.summary.items():
            logger.info(f"{key.replace('_', ' ').title()}: {value}")
        logger.info("-------------------")
        self.stdout.write(self.style.SUCCESS(f"Wrote {metrics.csv_path}"))

    @staticmethod
    def _fail(run: SimulationRun, message: str) -> None:
        run.status = SimulationRun.Status.FAILED
        run.error_message = message
        run.finished_at = timezone.now()
        run.save()
