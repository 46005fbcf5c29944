import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('run_id', models.CharField(db_index=True, max_length=255)),
                ('command', models.CharField(max_length=64)),
                ('status', models.CharField(choices=[('pending', 'Pending'), ('processing', 'Processing'), ('completed', 'Completed'), ('failed', 'Failed')], default='pending', max_length=20)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
                ('config', models.JSONField(default=dict)),
                ('config_hash', models.CharField(db_index=True, max_length=64)),
                ('output_dir', models.CharField(blank=True, max_length=1024)),
                ('total_items', models.IntegerField(default=0)),
                ('processed_items', models.IntegerField(default=0)),
                ('failed_items', models.IntegerField(default=0)),
                ('result', models.JSONField(blank=True, null=True)),
                ('error_message', models.TextField(blank=True)),
            ],
            options={
                'verbose_name': 'Experiment Run',
                'verbose_name_plural': 'Experiment Runs',
                'ordering': ['-created_at', '-id'],
                'indexes': [
                    models.Index(fields=['status', '-created_at'], name='rl_caching__status_2f1c1e_idx'),
                    models.Index(fields=['command', '-created_at'], name='rl_caching__command_8b0d4a_idx'),
                ],
            },
        ),
        migrations.CreateModel(
            name='KpiRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('policy', models.CharField(max_length=32)),
                ('seed', models.IntegerField()),
                ('n_steps', models.IntegerField()),
                ('storage_fraction', models.FloatField()),
                ('effective_contents', models.FloatField()),
                ('effective_target', models.FloatField(blank=True, null=True)),
                ('hit_ratio', models.FloatField()),
                ('hit_ratio_final', models.FloatField()),
                ('miss_ratio', models.FloatField()),
                ('latency_mean_ms', models.FloatField()),
                ('latency_p95_ms', models.FloatField()),
                ('reference_hit_ratio', models.FloatField(blank=True, null=True)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='kpis', to='rl_caching.experimentrun')),
            ],
            options={
                'verbose_name': 'KPI Record',
                'ordering': ['run', 'id'],
                'indexes': [
                    models.Index(fields=['run', 'policy'], name='rl_caching__run_id_5e7a9c_idx'),
                ],
            },
        ),
    ]
