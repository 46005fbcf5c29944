from django.db import models


class ExperimentRun(models.Model):
    """
    Track one command invocation and its seed-level fan-out.

    run_id is derived from the command and the resolved config hash, so
    re-running an identical config appends a new row with the same run_id.
    """
    STATUS_CHOICES = [
        ('pending', 'Pending'),
        ('processing', 'Processing'),
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ]

    run_id = models.CharField(max_length=255, db_index=True)
    command = models.CharField(max_length=64)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default='pending')
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    # Resolved experiment config
    config = models.JSONField(default=dict)
    config_hash = models.CharField(max_length=64, db_index=True)
    output_dir = models.CharField(max_length=1024, blank=True)

    # Seed-level progress
    total_items = models.IntegerField(default=0)
    processed_items = models.IntegerField(default=0)
    failed_items = models.IntegerField(default=0)

    # Result data
    result = models.JSONField(null=True, blank=True)
    error_message = models.TextField(blank=True)

    class Meta:
        ordering = ['-created_at', '-id']
        verbose_name = 'Experiment Run'
        verbose_name_plural = 'Experiment Runs'
        indexes = [
            models.Index(fields=['status', '-created_at'], name='rl_caching__status_2f1c1e_idx'),
            models.Index(fields=['command', '-created_at'], name='rl_caching__command_8b0d4a_idx'),
        ]

    def __str__(self):
        return f"{self.command} {self.run_id} - {self.status}"

    @property
    def progress_percentage(self):
        if self.total_items == 0:
            return 0
        return int((self.processed_items / self.total_items) * 100)

    def mark_processing(self, total_items):
        self.status = 'processing'
        self.total_items = total_items
        self.save(update_fields=['status', 'total_items', 'updated_at'])

    def mark_completed(self, result=None):
        self.status = 'completed'
        self.result = result
        self.save(update_fields=['status', 'result', 'updated_at'])

    def mark_failed(self, error):
        self.status = 'failed'
        self.failed_items += 1
        self.error_message = str(error)
        self.save(update_fields=['status', 'failed_items', 'error_message', 'updated_at'])


class KpiRecord(models.Model):
    """One KpiReport (policy, seed) of a run"""
    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name='kpis')
    policy = models.CharField(max_length=32)
    seed = models.IntegerField()
    n_steps = models.IntegerField()
    storage_fraction = models.FloatField()
    effective_contents = models.FloatField()
    effective_target = models.FloatField(null=True, blank=True)
    hit_ratio = models.FloatField()
    hit_ratio_final = models.FloatField()
    miss_ratio = models.FloatField()
    latency_mean_ms = models.FloatField()
    latency_p95_ms = models.FloatField()
    reference_hit_ratio = models.FloatField(null=True, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['run', 'id']
        verbose_name = 'KPI Record'
        indexes = [
            models.Index(fields=['run', 'policy'], name='rl_caching__run_id_5e7a9c_idx'),
        ]

    def __str__(self):
        return f"{self.policy} seed={self.seed}: {self.hit_ratio:.3f}"

    @classmethod
    def from_report(cls, run, report):
        return cls(run=run, **report.to_dict())
