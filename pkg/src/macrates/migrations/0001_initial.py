# Generated by Django 5.2.6 on 2026-10-18 09:12

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="SimulationRun",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                (
                    "scenario",
                    models.CharField(
                        choices=[
                            ("limited_duration", "Limited duration"),
                            ("file_upload", "File upload"),
                            ("stability_probe", "Stability probe"),
                        ],
                        db_index=True,
                        max_length=32,
                    ),
                ),
                (
                    "config_path",
                    models.CharField(
                        help_text="Scenario file the run was read from.", max_length=500
                    ),
                ),
                ("seed", models.CharField(max_length=20)),
                ("replications", models.PositiveIntegerField(default=1)),
                ("slots", models.PositiveBigIntegerField(blank=True, null=True)),
                ("output_dir", models.CharField(max_length=500)),
                ("csv_path", models.CharField(blank=True, max_length=500)),
                (
                    "status",
                    models.CharField(
                        choices=[
                            ("RUNNING", "Running"),
                            ("SUCCEEDED", "Succeeded"),
                            ("FAILED", "Failed"),
                        ],
                        db_index=True,
                        default="RUNNING",
                        max_length=10,
                    ),
                ),
                ("summary", models.JSONField(blank=True, default=dict)),
                ("error_message", models.TextField(blank=True)),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                ("finished_at", models.DateTimeField(blank=True, null=True)),
            ],
            options={
                "ordering": ("-created_at",),
            },
        ),
    ]
