"""Database index of pipeline bundles and inversion histories."""
from __future__ import annotations

from django.db import models


class Bundle(models.Model):
    """One output directory of a pipeline stage, identified by its manifest hash."""

    class Stage(models.TextChoices):
        FORWARD = "forward", "Forward"
        OBSERVE = "observe", "Observe"
        INVERT = "invert", "Invert"
        REPORT = "report", "Report"
        SWEEP = "sweep", "Sweep"
        CHECK = "check", "Check"

    stage = models.CharField(max_length=16, choices=Stage.choices)
    content_hash = models.CharField(max_length=64, unique=True)
    parent = models.ForeignKey(
        "self", on_delete=models.SET_NULL, related_name="children", blank=True, null=True
    )
    directory = models.CharField(max_length=500)
    preset = models.CharField(max_length=64, blank=True)
    seed = models.CharField(max_length=20, default="0")
    manifest = models.JSONField(default=dict, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        ordering = ["-created_at"]

    def __str__(self) -> str:
        return f"{self.stage}:{self.content_hash[:12]}"

    def lineage(self) -> list["Bundle"]:
        """This bundle followed by its ancestors, nearest first."""
        chain = [self]
        node = self.parent
        while node is not None:
            chain.append(node)
            node = node.parent
        return chain


class InversionIteration(models.Model):
    """One row of the outer-iteration history of an invert bundle."""

    bundle = models.ForeignKey(Bundle, on_delete=models.CASCADE, related_name="iterations")
    iteration = models.PositiveIntegerField()
    step_norm = models.FloatField()
    functional = models.FloatField()
    compat_defect = models.FloatField()
    w_norm = models.FloatField()
    beta_tvar = models.FloatField()
    gamma_tvar = models.FloatField()
    error_norm = models.FloatField(blank=True, null=True)

    class Meta:
        ordering = ["iteration"]
        constraints = [
            models.UniqueConstraint(fields=("bundle", "iteration"), name="unique_iteration_per_bundle"),
        ]

    def __str__(self) -> str:
        return f"{self.bundle} #{self.iteration}"
