from typing import Any, Dict, List, Optional, Sequence

from .base import BasePDF


class TableReportPDF(BasePDF):
    """Landscape report: a title, a metadata line and one bordered table."""

    FONT_SIZE_LARGE = 14
    FONT_SIZE_MEDIUM = 10
    FONT_SIZE_SMALL = 8

    GRID_W: float = 0.25
    RULE_W: float = 0.45

    MARGIN_LEFT: float = 15
    CONTENT_WIDTH: float = 267
    HEADER_Y: float = 20
    LINE_HEIGHT: float = 4
    TEXT_PADDING: float = 2
    ROW_HEIGHT: float = 7

    COLOR_GRAY_LIGHT: tuple = (200, 200, 200)
    COLOR_GRAY_HEADER: tuple = (240, 240, 240)
    COLOR_BLACK: tuple = (0, 0, 0)
    # Cell shading by verdict
    COLOR_SUCCEEDS: tuple = (248, 215, 215)
    COLOR_FAILS: tuple = (215, 240, 220)
    COLOR_NOT_APPLICABLE: tuple = (235, 235, 235)

    def __init__(self, title: str, subtitle: str = ""):
        super().__init__(orientation="L")
        self.report_title = title
        self.subtitle = subtitle
        self.set_auto_page_break(auto=True, margin=20)

    def header(self):
        self.set_xy(self.MARGIN_LEFT, 8)
        self.set_font(self.font_name, style="B", size=self.FONT_SIZE_MEDIUM)
        self.cell(0, 6, "forklab", align="L")
        self.set_draw_color(*self.COLOR_GRAY_LIGHT)
        self.line(self.MARGIN_LEFT, self.HEADER_Y - 4, self.MARGIN_LEFT + self.CONTENT_WIDTH, self.HEADER_Y - 4)
        self.set_draw_color(*self.COLOR_BLACK)
        self.set_y(self.HEADER_Y)

    def footer(self):
        self.set_y(-12)
        self.set_font(self.font_name, size=self.FONT_SIZE_SMALL)
        self.set_text_color(128)
        self.cell(0, 4, f"Page {self.page_no()} of {{nb}}", align="R")
        self.set_text_color(0, 0, 0)

    def add_title(self):
        self.set_x(self.MARGIN_LEFT)
        self.set_font(self.font_name, style="B", size=18)
        self.cell(0, 10, self.report_title, align="L")
        self.ln(10)
        if self.subtitle:
            self.set_x(self.MARGIN_LEFT)
            self.set_font(self.font_name, size=self.FONT_SIZE_MEDIUM)
            self.cell(0, 6, self.subtitle, align="L")
            self.ln(10)

    def _column_widths(self, columns: Sequence[str], rows: Sequence[Dict[str, Any]]) -> List[float]:
        """Share the content width by the longest text in each column."""
        self.set_font(self.font_name, size=self.FONT_SIZE_SMALL)
        natural = []
        for col in columns:
            texts = [col] + [self._text(r.get(col)) for r in rows]
            natural.append(max(self.get_string_width(t) for t in texts) + 2 * self.TEXT_PADDING)
        scale = min(1.0, self.CONTENT_WIDTH / sum(natural))
        return [w * scale for w in natural]

    def _text(self, value: Any) -> str:
        if value is None:
            return "-"
        if isinstance(value, float):
            return self._format_ratio(value)
        return str(value)

    def _fit(self, text: str, width: float) -> str:
        while self.get_string_width(text) > width - self.TEXT_PADDING and len(text) > 4:
            text = text[:-4] + "..."
        return text

    def _fill_for(self, text: str) -> Optional[tuple]:
        return {
            "Succeeds": self.COLOR_SUCCEEDS,
            "Fails": self.COLOR_FAILS,
            "NotApplicable": self.COLOR_NOT_APPLICABLE,
        }.get(text)

    def _add_table_headers(self, columns: Sequence[str], widths: Sequence[float]):
        self.set_font(self.font_name, style="B", size=self.FONT_SIZE_SMALL)
        self.set_fill_color(*self.COLOR_GRAY_HEADER)
        self.set_line_width(self.RULE_W)
        self.set_x(self.MARGIN_LEFT)
        for col, w in zip(columns, widths):
            self.cell(w, self.ROW_HEIGHT, self._fit(col, w), border="TB", fill=True, align="L")
        self.ln(self.ROW_HEIGHT)
        self.set_line_width(self.GRID_W)

    def add_table(self, columns: Sequence[str], rows: Sequence[Dict[str, Any]]):
        widths = self._column_widths(columns, rows)
        self._add_table_headers(columns, widths)
        self.set_draw_color(*self.COLOR_GRAY_LIGHT)
        for row in rows:
            if self.will_page_break(self.ROW_HEIGHT):
                self.add_page()
                self._add_table_headers(columns, widths)
                self.set_draw_color(*self.COLOR_GRAY_LIGHT)
            self.set_font(self.font_name, size=self.FONT_SIZE_SMALL)
            self.set_x(self.MARGIN_LEFT)
            for col, w in zip(columns, widths):
                text = self._text(row.get(col))
                fill = self._fill_for(text)
                if fill:
                    self.set_fill_color(*fill)
                self.cell(w, self.ROW_HEIGHT, self._fit(text, w), border=1, fill=bool(fill), align="L")
            self.ln(self.ROW_HEIGHT)
        self.set_draw_color(*self.COLOR_BLACK)
