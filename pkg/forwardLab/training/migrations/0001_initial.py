# Generated by Django 5.0.3 on 2026-10-18 10:12

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='TrainingRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=100)),
                ('preset', models.CharField(blank=True, max_length=50)),
                ('config_path', models.CharField(blank=True, max_length=255)),
                ('overrides', models.JSONField(blank=True, default=list)),
                ('config_hash', models.CharField(blank=True, max_length=64)),
                ('out_dir', models.CharField(blank=True, max_length=255)),
                ('status', models.CharField(choices=[('queued', 'Queued'), ('running', 'Running'), ('finished', 'Finished'), ('failed', 'Failed')], default='queued', max_length=10)),
                ('execution', models.CharField(default='greedy', max_length=20)),
                ('hgb_m', models.PositiveIntegerField(default=1)),
                ('epochs_done', models.PositiveIntegerField(default=0)),
                ('best_layer', models.IntegerField(blank=True, null=True)),
                ('best_top1', models.FloatField(blank=True, null=True)),
                ('fused_top1', models.FloatField(blank=True, null=True)),
                ('measured_peak_bytes', models.BigIntegerField(blank=True, null=True)),
                ('estimated_peak_bytes', models.BigIntegerField(blank=True, null=True)),
                ('error', models.TextField(blank=True)),
                ('created', models.DateTimeField(auto_now_add=True)),
                ('finished', models.DateTimeField(blank=True, null=True)),
            ],
            options={
                'ordering': ['-created'],
            },
        ),
        migrations.CreateModel(
            name='LayerEpochMetric',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('epoch', models.PositiveIntegerField()),
                ('layer', models.PositiveIntegerField()),
                ('split', models.CharField(choices=[('train', 'Train'), ('test', 'Test')], default='train', max_length=5)),
                ('loss', models.FloatField(blank=True, null=True)),
                ('top1', models.FloatField()),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='metrics', to='training.trainingrun')),
            ],
            options={
                'ordering': ['run', 'epoch', 'split', 'layer'],
                'constraints': [models.UniqueConstraint(fields=('run', 'epoch', 'layer', 'split'), name='unique_layer_epoch_metric')],
            },
        ),
    ]
