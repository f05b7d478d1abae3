# Generated manually for the SIR inversion project
from __future__ import annotations

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):
    initial = True

    dependencies: list[tuple[str, str]] = []

    operations = [
        migrations.CreateModel(
            name="Bundle",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                (
                    "stage",
                    models.CharField(
                        choices=[
                            ("forward", "Forward"),
                            ("observe", "Observe"),
                            ("invert", "Invert"),
                            ("report", "Report"),
                            ("sweep", "Sweep"),
                            ("check", "Check"),
                        ],
                        max_length=16,
                    ),
                ),
                ("content_hash", models.CharField(max_length=64, unique=True)),
                ("directory", models.CharField(max_length=500)),
                ("preset", models.CharField(blank=True, max_length=64)),
                ("seed", models.CharField(default="0", max_length=20)),
                ("manifest", models.JSONField(blank=True, default=dict)),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                ("updated_at", models.DateTimeField(auto_now=True)),
                (
                    "parent",
                    models.ForeignKey(
                        blank=True,
                        null=True,
                        on_delete=django.db.models.deletion.SET_NULL,
                        related_name="children",
                        to="epidemic.bundle",
                    ),
                ),
            ],
            options={"ordering": ["-created_at"]},
        ),
        migrations.CreateModel(
            name="InversionIteration",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                ("iteration", models.PositiveIntegerField()),
                ("step_norm", models.FloatField()),
                ("functional", models.FloatField()),
                ("compat_defect", models.FloatField()),
                ("w_norm", models.FloatField()),
                ("beta_tvar", models.FloatField()),
                ("gamma_tvar", models.FloatField()),
                ("error_norm", models.FloatField(blank=True, null=True)),
                (
                    "bundle",
                    models.ForeignKey(
                        on_delete=django.db.models.deletion.CASCADE,
                        related_name="iterations",
                        to="epidemic.bundle",
                    ),
                ),
            ],
            options={"ordering": ["iteration"]},
        ),
        migrations.AddConstraint(
            model_name="inversioniteration",
            constraint=models.UniqueConstraint(fields=("bundle", "iteration"), name="unique_iteration_per_bundle"),
        ),
    ]
