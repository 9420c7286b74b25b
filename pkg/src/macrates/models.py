from datetime import timedelta
from typing import Optional

from django.db import models


class SimulationRun(models.Model):
    """
    One invocation of the ``macrates`` command: what was run, where the results
    went and how it ended.
    """

    class Scenario(models.TextChoices):
        LIMITED_DURATION = "limited_duration", "Limited duration"
        FILE_UPLOAD = "file_upload", "File upload"
        STABILITY_PROBE = "stability_probe", "Stability probe"

    class Status(models.TextChoices):
        RUNNING = "RUNNING", "Running"
        SUCCEEDED = "SUCCEEDED", "Succeeded"
        FAILED = "FAILED", "Failed"

    scenario = models.CharField(max_length=32, choices=Scenario.choices, db_index=True)
    config_path = models.CharField(max_length=500, help_text="Scenario file the run was read from.")
    # u64 seeds do not fit a signed 64-bit column.
    seed = models.CharField(max_length=20)
    replications = models.PositiveIntegerField(default=1)
    slots = models.PositiveBigIntegerField(null=True, blank=True)
    output_dir = models.CharField(max_length=500)
    csv_path = models.CharField(max_length=500, blank=True)
    status = models.CharField(
        max_length=10, choices=Status.choices, default=Status.RUNNING, db_index=True
    )
    summary = models.JSONField(default=dict, blank=True)
    error_message = models.TextField(blank=True)

    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ("-created_at",)

    def __str__(self) -> str:
        return f"{self.get_scenario_display()} run {self.pk} (seed {self.seed}, {self.status.lower()})"

    @property
    def duration(self) -> Optional[timedelta]:
        if self.finished_at is None:
            return None
        return self.finished_at - self.created_at
