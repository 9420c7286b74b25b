from django.contrib import admin

from .models import SimulationRun


@admin.register(SimulationRun)
class SimulationRunAdmin(admin.ModelAdmin):
    """Admin configuration for the SimulationRun model."""

    list_display = (
        "id",
        "scenario",
        "seed",
        "replications",
        "slots",
        "status",
        "created_at",
        "finished_at",
    )
    list_filter = ("scenario", "status")
    search_fields = ("config_path", "output_dir", "seed")
    readonly_fields = ("created_at", "finished_at", "summary", "error_message")
    ordering = ("-created_at",)
