from reportlab.lib.pagesizes import A4, landscape
from reportlab.pdfgen import canvas
from reportlab.lib.units import inch
from reportlab.lib import colors
from datetime import datetime
from io import BytesIO

COLUMNS = [("Method", 0.0), ("Look ahead", 3.2), ("fps", 4.3), ("Acc", 5.0), ("Avg. F1", 6.0),
           ("Edit", 7.0), ("F1@10", 8.0)]
MEASURES = ("accuracy", "average_f1", "edit_score", "f1_at_10")


def _new_page(c, height, title):
    y = height - 1*inch
    c.setFont("Helvetica-Bold", 14)
    c.drawString(1*inch, y, title)
    c.setFont("Helvetica", 9)
    c.drawRightString(landscape(A4)[0] - 1*inch, y, datetime.now().strftime('%d/%m/%Y %H:%M'))
    return y - 0.5*inch


def generate_metrics_report(title, rows, vocab=None):
    """
    Renders (method, look_ahead, fps, MetricsReport) rows as a PDF table, optionally followed by
    per-gesture F1 in the vocabulary's colors. Returns a BytesIO buffer.
    """
    buffer = BytesIO()
    width, height = landscape(A4)
    c = canvas.Canvas(buffer, pagesize=landscape(A4))
    y = _new_page(c, height, title)

    # Table header
    c.setFont("Helvetica-Bold", 11)
    for name, x in COLUMNS:
        c.drawString(1*inch + x*inch, y, name)
    y -= 0.15*inch
    c.setStrokeColor(colors.black)
    c.line(1*inch, y, width - 1*inch, y)

    c.setFont("Helvetica", 11)
    for method, look_ahead, fps, report in rows:
        y -= 0.3*inch
        if y < 1*inch:
            c.showPage()
            y = _new_page(c, height, title)
            c.setFont("Helvetica", 11)
        values = [method, str(look_ahead), str(fps)] + [f"{getattr(report, m):.1f}" for m in MEASURES]
        for (_, x), value in zip(COLUMNS, values):
            c.drawString(1*inch + x*inch, y, value)

    # Per-gesture F1 of each row
    if vocab is not None:
        for method, look_ahead, fps, report in rows:
            c.showPage()
            y = _new_page(c, height, f"{method} (look ahead {look_ahead}, {fps} fps): F1 per gesture")
            for index, value in sorted(report.per_class_f1.items()):
                entry = vocab.entries[index]
                r, g, b = (channel / 255 for channel in entry.color)
                c.setFillColorRGB(r, g, b)
                c.rect(1*inch, y - 0.05*inch, 0.2*inch, 0.2*inch, fill=1, stroke=0)
                c.setFillColor(colors.black)
                c.drawString(1.4*inch, y, f"{entry.gesture_id}")
                c.drawString(2.2*inch, y, f"{value:.1f}")
                c.drawString(3.0*inch, y, entry.display_name)
                y -= 0.3*inch

    c.showPage()
    c.save()

    buffer.seek(0)
    return buffer
