# quality_app/models.py
from django.db import models


class ExperimentRun(models.Model):
    """One CLI invocation and the manifest it wrote next to its outputs."""

    STATUS_CHOICES = [
        ('running', 'Running'),
        ('succeeded', 'Succeeded'),
        ('failed', 'Failed'),
    ]

    command = models.CharField(max_length=50)
    options = models.JSONField(default=dict)
    config = models.JSONField(default=dict, blank=True)
    seeds = models.JSONField(default=list, blank=True)
    inputs = models.JSONField(default=dict, blank=True)
    outputs = models.JSONField(default=dict, blank=True)
    output_dir = models.CharField(max_length=500, blank=True)
    tool_version = models.CharField(max_length=20)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='running')
    error = models.TextField(blank=True)
    started_at = models.DateTimeField()
    finished_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-started_at']

    def __str__(self):
        return f"{self.command} ({self.status}) {self.output_dir}"

    def duration_seconds(self):
        """Wall-clock duration, or None while the run is still going"""
        if self.finished_at is None:
            return None
        return (self.finished_at - self.started_at).total_seconds()

    def mark_finished(self, status, finished_at, outputs=None, error=''):
        self.status = status
        self.finished_at = finished_at
        self.error = error
        if outputs is not None:
            self.outputs = outputs
        self.save()
