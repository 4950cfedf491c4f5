from datetime import datetime, timezone

from fpdf import FPDF

# Reports are regenerated from the same run; a fixed date keeps them byte-identical.
FIXED_CREATION_DATE = datetime(2024, 1, 1, tzinfo=timezone.utc)


class BasePDF(FPDF):
    """Base PDF class with common setup and utilities."""

    def __init__(self, orientation: str = "L"):
        super().__init__(orientation=orientation, unit="mm", format="A4")
        self.set_auto_page_break(auto=True, margin=15)
        self.alias_nb_pages()
        self.set_creation_date(FIXED_CREATION_DATE)
        self.set_creator("forklab")

        # Core font only: cells hold ASCII protocol names and evidence tags
        self.font_name = "Helvetica"

    def _format_ratio(self, value: float) -> str:
        return f"{value:.4f}"
