"""
Run reports: the ``report.json`` payload and its one-page PDF rendering.
"""

import io
import json
import logging
from pathlib import Path

from reportlab.lib.pagesizes import A4
from reportlab.pdfgen import canvas

from diagnostics.report import curve_metrics
from diagnostics.metrics import LayerCurve


logger = logging.getLogger(__name__)

REPORT_JSON = 'report.json'
REPORT_PDF = 'report.pdf'


def build_report(name, evaluation, train_evaluation=None, estimate=None, measured_peak=None, epochs=None):
    """
    Assemble the JSON-serialisable report of a finished run.

    Args:
        name (str): Run or configuration name.
        evaluation (EvaluationResult): Test-split evaluation.
        train_evaluation (EvaluationResult | None): Train-split evaluation used for layer selection.
        estimate (MemoryEstimate | None): Analytic memory estimate.
        measured_peak (int | None): Measured peak bytes, when counters were enabled.
    """

    curve = LayerCurve(evaluation.per_layer_top1, name=name, split=evaluation.split)
    weights = evaluation.fusion_weights or None
    report = {
        'name': name,
        'epochs': epochs,
        'layers': [
            {'layer': layer, 'top1': acc, 'w_l': weights[index] if weights else None,
             'train_top1': train_evaluation.per_layer_top1[index] if train_evaluation else None}
            for index, (layer, acc) in enumerate(zip(evaluation.layers, evaluation.per_layer_top1))
        ],
        'best_layer': evaluation.best_layer,
        'best_top1': evaluation.best_top1,
        'fused_top1': evaluation.fused_top1,
        'fusion_weights': weights,
        'diagnostics': curve_metrics(curve, weights),
        'memory': None,
    }
    if estimate is not None or measured_peak is not None:
        report['memory'] = {
            'estimated_peak_bytes': estimate.peak_bytes if estimate else None,
            'estimated_activation_bytes': estimate.activation_bytes if estimate else None,
            'parameter_bytes': estimate.parameter_bytes if estimate else None,
            'measured_peak_bytes': measured_peak,
        }
    return report


def write_report(report, run_dir):
    path = Path(run_dir) / REPORT_JSON
    path.write_text(json.dumps(report, indent=2), encoding='utf-8')
    logger.info("Report written to %s", path)
    return path


def read_report(run_dir):
    path = Path(run_dir) / REPORT_JSON
    return json.loads(path.read_text(encoding='utf-8'))


def _fmt(value, spec='.2f', unit=''):
    return f"{value:{spec}}{unit}" if value is not None else 'n/a'


class PDFReportGenerator:
    """Renders a run report as a one-page PDF: summary lines followed by the per-layer table."""

    def __init__(self, report):
        """
        Args:
            report (dict): Payload produced by `build_report`.
        """

        self.report = report
        self.buffer = io.BytesIO()

    def generate_report(self):
        """
        Returns:
            BytesIO: A buffer holding the PDF, positioned at its start.
        """

        report = self.report
        c = canvas.Canvas(self.buffer, pagesize=A4)
        c.setFont('Helvetica-Bold', 13)
        c.drawString(60, 800, f"forwardLab run report: {report['name']}")
        c.setFont('Helvetica', 10)

        diagnostics = report.get('diagnostics') or {}
        lines = [
            f"Epochs: {report.get('epochs') if report.get('epochs') is not None else 'n/a'}",
            f"Best Pred: layer {report['best_layer']}, top-1 {_fmt(report['best_top1'], unit='%')}",
            f"Fusion Pred: top-1 {_fmt(report['fused_top1'], unit='%')}",
            f"Decline area: {_fmt(diagnostics.get('decline_area'))}, "
            f"tail retention: {_fmt(diagnostics.get('tail_retention'), '.3f')}, "
            f"N_eff: {_fmt(diagnostics.get('n_eff'), '.2f')}",
        ]
        memory = report.get('memory')
        if memory:
            lines.append(f"Peak memory: estimated {_fmt(memory.get('estimated_peak_bytes'), ',d')} B, "
                         f"measured {_fmt(memory.get('measured_peak_bytes'), ',d')} B")

        y_position = 770
        for line in lines:
            c.drawString(60, y_position, line)
            y_position -= 16

        y_position -= 10
        c.setFont('Helvetica-Bold', 10)
        c.drawString(60, y_position, "Layer    Test top-1    Train top-1    Fusion weight")
        c.setFont('Helvetica', 10)
        y_position -= 16
        for row in report['layers']:
            if y_position < 50:
                c.showPage()
                c.setFont('Helvetica', 10)
                y_position = 800
            c.drawString(60, y_position, f"{row['layer']:>5}    {_fmt(row['top1']):>10}    "
                                         f"{_fmt(row.get('train_top1')):>11}    {_fmt(row.get('w_l'), '.4f'):>13}")
            y_position -= 14

        c.showPage()
        c.save()
        self.buffer.seek(0)
        return self.buffer


def export_report(run_dir):
    """Write ``report.pdf`` next to an existing ``report.json``; returns both paths."""

    run_dir = Path(run_dir)
    report = read_report(run_dir)
    pdf_path = run_dir / REPORT_PDF
    pdf_path.write_bytes(PDFReportGenerator(report).generate_report().getvalue())
    logger.info("PDF report written to %s", pdf_path)
    return run_dir / REPORT_JSON, pdf_path
