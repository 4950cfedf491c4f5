from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from .table_report import TableReportPDF


def generate_table_pdf(
    title: str,
    columns: Sequence[str],
    rows: Sequence[Dict[str, Any]],
    *,
    subtitle: str = "",
    output_path: Optional[str] = None,
) -> bytes:
    """Render one table of report rows; same rows in, same bytes out."""
    pdf = TableReportPDF(title, subtitle)
    pdf.add_page()
    pdf.add_title()
    pdf.add_table(columns, rows)

    if output_path:
        pdf.output(output_path)
        return Path(output_path).read_bytes()

    return bytes(pdf.output())
